#pragma once

#include "CLI11.hpp"

namespace mct::cli {

// CLI11 config reader for JSON files. Nested objects address subcommands,
// e.g. {"seed": 3, "recon": {"tv": {"lambda": 1e-4}}}; underscores in keys
// match hyphens in option names.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool write_description,
                        std::string prefix) const override;
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override;
};

}  // namespace mct::cli
