#pragma once

#include <filesystem>
#include <string>

#include "pgx/data.hpp"
#include "pgx/train.hpp"

namespace pgx {

// Every tunable the command-line tools accept, as one bundle. The few
// dimensions the generator and the model must agree on (d_in, d_g, seed)
// are exposed as single keys that set both sides.
struct Settings {
    SynthConfig synth;
    TrainConfig train;
    std::size_t folds = 4;

    Settings();
};

// Applies one key/value pair. Unknown keys and unparseable values raise
// ValidationError naming the key.
void apply_setting(Settings& s, const std::string& key,
                   const std::string& value);

// Parses `key = value` text on top of `base`. '#' starts a comment (whole
// line or trailing), blank lines are skipped, and errors carry 1-based
// line numbers.
Settings parse_settings(const std::string& text, Settings base = Settings());
Settings load_settings_file(const std::filesystem::path& path,
                            Settings base = Settings());

// The fully resolved configuration, one `# key = value` line per key in a
// fixed order. Prepended to every tool output so a run can be reproduced
// from any of its artifacts. Contains no file paths.
std::string settings_echo(const Settings& s);

}  // namespace pgx
