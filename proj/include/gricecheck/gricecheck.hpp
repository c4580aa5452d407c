#pragma once

// Umbrella header.

#include "gricecheck/backend.hpp"     // IWYU pragma: export
#include "gricecheck/corpus.hpp"      // IWYU pragma: export
#include "gricecheck/digest.hpp"      // IWYU pragma: export
#include "gricecheck/extraction.hpp"  // IWYU pragma: export
#include "gricecheck/harness.hpp"     // IWYU pragma: export
#include "gricecheck/metrics.hpp"     // IWYU pragma: export
#include "gricecheck/prompting.hpp"   // IWYU pragma: export
#include "gricecheck/version.hpp"     // IWYU pragma: export
