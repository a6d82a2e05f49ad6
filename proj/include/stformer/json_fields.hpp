#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace stf {

/// Typed field reader over one JSON object. Type mismatches and, on
/// `finish()`, keys that were never read are appended to `errors` as
/// "prefix.key: message" instead of throwing, so a caller can report every
/// problem in one pass.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& obj, std::string prefix,
             std::vector<std::string>& errors);

  bool ok() const { return valid_; }
  std::string path(const std::string& key) const;

  /// Returns the value for `key` (marking it consumed) or nullptr.
  const nlohmann::json* find(const std::string& key);

  void read(const std::string& key, std::size_t& out);
  void read(const std::string& key, double& out);
  void read(const std::string& key, bool& out);
  void read(const std::string& key, std::string& out);
  void read(const std::string& key, std::vector<std::size_t>& out);

  void error(const std::string& key, const std::string& message);
  /// Reports every key present in the object but never consumed.
  void finish();

 private:
  const nlohmann::json& obj_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> consumed_;
  bool valid_ = true;
};

}  // namespace stf
