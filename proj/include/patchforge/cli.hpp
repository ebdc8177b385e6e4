#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "patchforge/config.hpp"
#include "patchforge/renderer.hpp"

namespace patchforge {

// Runs one `patchforge` command line and returns the process exit code:
// 0 on success, the error category's code otherwise.
int run_cli(const std::vector<std::string>& args);

// Scenes named by a run config: an ingested image directory or the
// built-in synthetic set.
std::vector<Scene> load_scenes(const RunConfig& cfg);

// Accepts a PNG (8-bit) or a checkpoint (full precision).
PatchImage load_patch(const std::filesystem::path& path);

// round(cm / 2.54 * dpi)
int print_pixels(double cm, double dpi);

}  // namespace patchforge
