// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "leafnet/data.hpp"
#include "leafnet/model.hpp"
#include "leafnet/train.hpp"

namespace leafnet::cli {

/// Flat key=value settings. Every key has a default, so the effective
/// configuration is always complete and can be written back out verbatim.
class Config {
 public:
  Config();

  /// Lines of `key = value`; '#' starts a comment. Unknown keys throw
  /// UnknownConfigKey.
  void merge_file(const std::filesystem::path& path);
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  static bool known(const std::string& key);
  /// True once a file, override or flag has assigned the key.
  bool is_set(const std::string& key) const { return assigned_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Every effective value, sorted by key, in the same key=value format.
  std::string dump() const;

  Preset preset() const;
  DType dtype() const;
  InputSpec input() const;  // image_size 0 selects the preset default
  HeadSpec head(std::size_t classes) const;
  TrainConfig train_config() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> assigned_;
};

}  // namespace leafnet::cli
