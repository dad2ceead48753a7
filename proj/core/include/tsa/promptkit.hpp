#pragma once

#include <array>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/label.hpp"

namespace tsa {

class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How much of the annotation guidelines a system prompt carries, 1 (a bare
/// task statement) to 6 (the guidelines as given to annotators).
class PrescriptivenessLevel {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 6;

  /// Throws PromptError outside [1, 6].
  explicit PrescriptivenessLevel(int value);

  int value() const { return value_; }

  auto operator<=>(const PrescriptivenessLevel&) const = default;

 private:
  int value_;
};

/// One piece of a system prompt. A fragment is part of every level in
/// [applies_from_level, applies_until_level]; within a level fragments are
/// joined in ascending order_key.
struct GuidelineFragment {
  std::string id;
  std::string body;
  int applies_from_level = 1;
  int applies_until_level = PrescriptivenessLevel::kMax;
  int order_key = 0;

  bool applies_to(PrescriptivenessLevel level) const {
    return applies_from_level <= level.value() && level.value() <= applies_until_level;
  }
};

/// A guideline set: system-prompt fragments plus one user template per UQ
/// method. Immutable after construction.
///
/// On disk a library is a directory with
///   system/<name>.txt   one fragment each, with a front-matter block
///                       (id, applies_from_level, optional applies_until_level,
///                       order_key) between two "---" lines
///   user/scs.txt, user/dp.txt, user/vca.txt
/// User templates use the placeholders {entity} and {headline}.
class FragmentLibrary {
 public:
  FragmentLibrary(std::string name, std::vector<GuidelineFragment> fragments,
                  std::map<UqMethod, std::string> user_templates);

  static FragmentLibrary load(const std::filesystem::path& dir);

  const std::string& name() const { return name_; }
  const std::vector<GuidelineFragment>& fragments() const { return fragments_; }

  /// Fragments of `level` in order_key order.
  std::vector<const GuidelineFragment*> fragments_for(PrescriptivenessLevel level) const;

  /// Levels in [1, 6] with no fragment at all.
  std::vector<int> missing_levels() const;

  /// Throws PromptError when `method` has no template.
  const std::string& user_template(UqMethod method) const;

 private:
  std::string name_;
  std::vector<GuidelineFragment> fragments_;
  std::map<UqMethod, std::string> user_templates_;
};

/// Parses one fragment file (front-matter + body).
GuidelineFragment parse_fragment(std::string_view file_text, std::string_view origin);

/// Fragments of `level` joined by blank lines. Throws PromptError naming the
/// level when the library has no fragment for it.
std::string render_system_prompt(PrescriptivenessLevel level, const FragmentLibrary& library);

/// Substitutes the instance's entity and headline into the method's user
/// template. Throws PromptError on an empty entity/headline or an unknown
/// placeholder.
std::string render_user_prompt(UqMethod method, const HeadlineInstance& instance, const FragmentLibrary& library);

struct RenderedPrompt {
  std::string system;
  std::string user;
  PrescriptivenessLevel level{1};
  UqMethod method = UqMethod::Scs;
  std::string instance_id;
  /// Digest of (system, user template, level, method); independent of the
  /// instance so that it can key a response cache.
  std::string template_hash;
};

std::string template_hash(std::string_view system, std::string_view user_template, PrescriptivenessLevel level,
                          UqMethod method);

RenderedPrompt render_prompt(PrescriptivenessLevel level, UqMethod method, const HeadlineInstance& instance,
                             const FragmentLibrary& library);

/// Directory holding the shipped fragment libraries and reference data:
/// $TSA_DATA_DIR if set, else the source tree when built in place, else the
/// install prefix.
std::filesystem::path default_data_dir();

}  // namespace tsa
