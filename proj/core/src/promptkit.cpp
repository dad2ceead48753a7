#include "tsa/promptkit.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>

#include "text_util.hpp"
#include "tsa/digest.hpp"

namespace tsa {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PromptError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int parse_int_field(std::string_view value, std::string_view key, std::string_view origin) {
  const std::string text(detail::trim(value));
  char* end = nullptr;
  const long parsed = std::strtol(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw PromptError(std::string(origin) + ": front-matter key '" + std::string(key) + "' is not an integer");
  }
  return static_cast<int>(parsed);
}

const std::regex& placeholder_pattern() {
  static const std::regex pattern(R"(\{([A-Za-z_][A-Za-z0-9_]*)\})");
  return pattern;
}

}  // namespace

PrescriptivenessLevel::PrescriptivenessLevel(int value) : value_(value) {
  if (value < kMin || value > kMax) {
    throw PromptError("prescriptiveness level " + std::to_string(value) + " is outside [1, 6]");
  }
}

GuidelineFragment parse_fragment(std::string_view file_text, std::string_view origin) {
  std::string text(file_text);
  text.erase(std::remove(text.begin(), text.end(), '\r'), text.end());
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "---") {
    throw PromptError(std::string(origin) + ": missing front-matter (first line must be ---)");
  }
  GuidelineFragment fragment;
  bool has_id = false;
  bool has_from = false;
  bool has_order = false;
  bool closed = false;
  while (std::getline(in, line)) {
    if (detail::trim(line) == "---") {
      closed = true;
      break;
    }
    if (detail::trim(line).empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw PromptError(std::string(origin) + ": malformed front-matter line '" + line + "'");
    const std::string key(detail::trim(std::string_view(line).substr(0, colon)));
    const std::string_view value = detail::trim(std::string_view(line).substr(colon + 1));
    if (key == "id") {
      fragment.id = std::string(value);
      has_id = !fragment.id.empty();
    } else if (key == "applies_from_level") {
      fragment.applies_from_level = parse_int_field(value, key, origin);
      has_from = true;
    } else if (key == "applies_until_level") {
      fragment.applies_until_level = parse_int_field(value, key, origin);
    } else if (key == "order_key") {
      fragment.order_key = parse_int_field(value, key, origin);
      has_order = true;
    } else {
      throw PromptError(std::string(origin) + ": unknown front-matter key '" + key + "'");
    }
  }
  if (!closed) throw PromptError(std::string(origin) + ": unterminated front-matter");
  if (!has_id || !has_from || !has_order) {
    throw PromptError(std::string(origin) + ": front-matter needs id, applies_from_level and order_key");
  }
  std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  fragment.body = std::string(detail::trim(body));
  return fragment;
}

FragmentLibrary::FragmentLibrary(std::string name, std::vector<GuidelineFragment> fragments,
                                 std::map<UqMethod, std::string> user_templates)
    : name_(std::move(name)), fragments_(std::move(fragments)), user_templates_(std::move(user_templates)) {
  for (const auto& f : fragments_) {
    const std::string where = "fragment '" + f.id + "' in library '" + name_ + "'";
    if (detail::trim(f.body).empty()) throw PromptError(where + " has an empty body");
    if (f.applies_from_level < PrescriptivenessLevel::kMin || f.applies_from_level > PrescriptivenessLevel::kMax ||
        f.applies_until_level < f.applies_from_level || f.applies_until_level > PrescriptivenessLevel::kMax) {
      throw PromptError(where + " has an invalid level range [" + std::to_string(f.applies_from_level) + ", " +
                        std::to_string(f.applies_until_level) + "]");
    }
  }
  std::stable_sort(fragments_.begin(), fragments_.end(), [](const auto& a, const auto& b) {
    return a.order_key < b.order_key;
  });
  for (std::size_t i = 1; i < fragments_.size(); ++i) {
    if (fragments_[i].id == fragments_[i - 1].id) throw PromptError("duplicate fragment id '" + fragments_[i].id + "'");
  }
}

FragmentLibrary FragmentLibrary::load(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw PromptError("fragment library '" + dir.string() + "' is not a directory");

  std::vector<fs::path> files;
  if (fs::is_directory(dir / "system")) {
    for (const auto& entry : fs::directory_iterator(dir / "system")) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<GuidelineFragment> fragments;
  for (const auto& file : files) fragments.push_back(parse_fragment(read_file(file), file.string()));

  std::map<UqMethod, std::string> templates;
  for (UqMethod method : kAllMethods) {
    const fs::path file = dir / "user" / (detail::to_lower_ascii(to_string(method)) + ".txt");
    if (fs::exists(file)) templates[method] = std::string(detail::trim(read_file(file)));
  }
  return FragmentLibrary(dir.filename().string(), std::move(fragments), std::move(templates));
}

std::vector<const GuidelineFragment*> FragmentLibrary::fragments_for(PrescriptivenessLevel level) const {
  std::vector<const GuidelineFragment*> out;
  for (const auto& f : fragments_) {
    if (f.applies_to(level)) out.push_back(&f);
  }
  return out;
}

std::vector<int> FragmentLibrary::missing_levels() const {
  std::vector<int> missing;
  for (int l = PrescriptivenessLevel::kMin; l <= PrescriptivenessLevel::kMax; ++l) {
    if (fragments_for(PrescriptivenessLevel(l)).empty()) missing.push_back(l);
  }
  return missing;
}

const std::string& FragmentLibrary::user_template(UqMethod method) const {
  auto it = user_templates_.find(method);
  if (it == user_templates_.end()) {
    throw PromptError("fragment library '" + name_ + "' has no user template for " + std::string(to_string(method)));
  }
  return it->second;
}

std::string render_system_prompt(PrescriptivenessLevel level, const FragmentLibrary& library) {
  const auto fragments = library.fragments_for(level);
  if (fragments.empty()) {
    throw PromptError("fragment library '" + library.name() + "' has no fragments for level " +
                      std::to_string(level.value()));
  }
  std::string out;
  for (const GuidelineFragment* f : fragments) {
    if (!out.empty()) out += "\n\n";
    out += f->body;
  }
  return out;
}

std::string render_user_prompt(UqMethod method, const HeadlineInstance& instance, const FragmentLibrary& library) {
  if (detail::trim(instance.text).empty()) throw PromptError("instance '" + instance.id + "' has an empty headline");
  if (detail::trim(instance.target_entity).empty()) {
    throw PromptError("instance '" + instance.id + "' has an empty target entity");
  }
  const std::string& tmpl = library.user_template(method);

  // Single pass so that braces inside the headline are never re-expanded.
  std::string out;
  auto cursor = tmpl.cbegin();
  for (std::sregex_iterator it(tmpl.begin(), tmpl.end(), placeholder_pattern()), end; it != end; ++it) {
    const std::smatch& match = *it;
    out.append(cursor, match[0].first);
    const std::string name = match[1].str();
    if (name == "entity") {
      out += instance.target_entity;
    } else if (name == "headline") {
      out += instance.text;
    } else {
      throw PromptError("user template for " + std::string(to_string(method)) + " has unresolved placeholder {" +
                        name + "}");
    }
    cursor = match[0].second;
  }
  out.append(cursor, tmpl.cend());
  return out;
}

std::string template_hash(std::string_view system, std::string_view user_template, PrescriptivenessLevel level,
                          UqMethod method) {
  const std::string level_text = std::to_string(level.value());
  return tuple_digest({"tsa-template-v1", system, user_template, level_text, to_string(method)});
}

RenderedPrompt render_prompt(PrescriptivenessLevel level, UqMethod method, const HeadlineInstance& instance,
                             const FragmentLibrary& library) {
  RenderedPrompt prompt;
  prompt.system = render_system_prompt(level, library);
  prompt.user = render_user_prompt(method, instance, library);
  prompt.level = level;
  prompt.method = method;
  prompt.instance_id = instance.id;
  prompt.template_hash = template_hash(prompt.system, library.user_template(method), level, method);
  return prompt;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("TSA_DATA_DIR"); env != nullptr && *env != '\0') return env;
#ifdef TSA_BUILD_DATA_DIR
  if (std::filesystem::is_directory(TSA_BUILD_DATA_DIR)) return TSA_BUILD_DATA_DIR;
#endif
#ifdef TSA_INSTALL_DATA_DIR
  return TSA_INSTALL_DATA_DIR;
#else
  return "data";
#endif
}

}  // namespace tsa
