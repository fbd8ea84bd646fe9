#include "goaltrack/prompts.hpp"

#include <fstream>
#include <iterator>

#include "builtin_prompts.hpp"
#include "goaltrack/error.hpp"

namespace goaltrack {

std::string_view PromptCatalog::file_name(PromptStage stage) {
  switch (stage) {
    case PromptStage::Infer: return "infer.txt";
    case PromptStage::Merge: return "merge.txt";
    case PromptStage::Evaluate: return "evaluate.txt";
    case PromptStage::Keyphrase: return "keyphrase.txt";
  }
  return "";
}

PromptCatalog PromptCatalog::builtin() {
  PromptCatalog catalog;
  catalog.templates_[PromptStage::Infer] = std::string(builtin_prompts::kInfer);
  catalog.templates_[PromptStage::Merge] = std::string(builtin_prompts::kMerge);
  catalog.templates_[PromptStage::Evaluate] = std::string(builtin_prompts::kEvaluate);
  catalog.templates_[PromptStage::Keyphrase] = std::string(builtin_prompts::kKeyphrase);
  return catalog;
}

PromptCatalog PromptCatalog::load(const std::filesystem::path& dir) {
  PromptCatalog catalog;
  for (auto stage : {PromptStage::Infer, PromptStage::Merge, PromptStage::Evaluate,
                     PromptStage::Keyphrase}) {
    const auto path = dir / file_name(stage);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read prompt " + path.string());
    catalog.templates_[stage].assign(std::istreambuf_iterator<char>(in), {});
  }
  return catalog;
}

const std::string& PromptCatalog::raw(PromptStage stage) const { return templates_.at(stage); }

std::string PromptCatalog::render(PromptStage stage,
                                  const std::map<std::string, std::string>& values) const {
  return render_template(raw(stage), values);
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '{') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
        out.push_back('{');
        ++i;
        continue;
      }
      const auto close = tmpl.find('}', i);
      if (close == std::string_view::npos) {
        throw Error(ErrorCode::InvalidConfig, "unterminated placeholder in prompt");
      }
      const std::string name(tmpl.substr(i + 1, close - i - 1));
      auto it = values.find(name);
      if (it == values.end()) {
        throw Error(ErrorCode::InvalidConfig, "no value for prompt placeholder {" + name + "}");
      }
      out += it->second;
      i = close;
    } else if (c == '}') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
        out.push_back('}');
        ++i;
        continue;
      }
      throw Error(ErrorCode::InvalidConfig, "unbalanced '}' in prompt");
    } else {
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace goaltrack
