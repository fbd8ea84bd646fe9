#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace goaltrack {

enum class PromptStage { Infer, Merge, Evaluate, Keyphrase };

// The four stage prompts, stored as brace-escaped templates: "{{" and "}}"
// are literal braces, "{name}" is a placeholder.
class PromptCatalog {
 public:
  // Prompts compiled into the library from prompts/*.txt.
  static PromptCatalog builtin();
  // Reads infer.txt, merge.txt, evaluate.txt, keyphrase.txt from `dir`.
  static PromptCatalog load(const std::filesystem::path& dir);

  const std::string& raw(PromptStage stage) const;
  std::string render(PromptStage stage, const std::map<std::string, std::string>& values = {}) const;

  static std::string_view file_name(PromptStage stage);

 private:
  std::map<PromptStage, std::string> templates_;
};

// Substitutes placeholders and unescapes doubled braces. Throws
// InvalidConfig on an unknown placeholder or an unbalanced brace.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

}  // namespace goaltrack
