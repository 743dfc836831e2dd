#pragma once

#include <string>
#include <vector>

#include "degan/config.hpp"
#include "degan/data.hpp"

namespace degan {

/// Commands the CLI dispatches to. Kept as plain functions so tests can run
/// them in-process.
extern const std::vector<std::string> kCommands;

bool is_command(const std::string& name);

/// Dataset selected by the config: the synthetic set when data_dir is empty,
/// otherwise the image tree at data_dir; optionally 110x augmented. Validates
/// image dimensions against the config.
std::vector<LabeledImage> load_dataset(const RunConfig& cfg);

/// Value for the results "setting" column: setting_label if given, otherwise
/// "synthetic" or "images" by data source.
std::string setting_name(const RunConfig& cfg);

/// Run one command under a manifest: writes <out_dir>/manifest.json with
/// status "running" first, executes, then finalizes it to "ok" with the list
/// of artifacts. On error the manifest is finalized to "failed" and the
/// exception propagates. Returns the process exit code (0).
int run_command(const std::string& command, const RunConfig& cfg);

}  // namespace degan
