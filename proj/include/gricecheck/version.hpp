#pragma once

#include <string_view>

namespace gricecheck {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

// Version stamp of the built-in prompt templates and exemplar bank. It is
// mixed into every cache key and surfaced in reports, so any change to the
// rendered wording must bump it.
inline constexpr std::string_view kTemplateVersion = "v1";

}  // namespace gricecheck
