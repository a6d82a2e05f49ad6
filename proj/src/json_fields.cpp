#include "stformer/json_fields.hpp"

namespace stf {

JsonFields::JsonFields(const nlohmann::json& obj, std::string prefix,
                       std::vector<std::string>& errors)
    : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {
  if (!obj_.is_object()) {
    errors_.push_back((prefix_.empty() ? std::string("config") : prefix_) +
                      ": expected an object");
    valid_ = false;
  }
}

std::string JsonFields::path(const std::string& key) const {
  return prefix_.empty() ? key : prefix_ + "." + key;
}

const nlohmann::json* JsonFields::find(const std::string& key) {
  if (!valid_) return nullptr;
  auto it = obj_.find(key);
  if (it == obj_.end()) return nullptr;
  consumed_.insert(key);
  return &*it;
}

void JsonFields::error(const std::string& key, const std::string& message) {
  errors_.push_back(path(key) + ": " + message);
}

void JsonFields::read(const std::string& key, std::size_t& out) {
  if (const auto* v = find(key)) {
    if (v->is_number_unsigned()) {
      out = v->get<std::size_t>();
    } else {
      error(key, "expected a non-negative integer");
    }
  }
}

void JsonFields::read(const std::string& key, double& out) {
  if (const auto* v = find(key)) {
    if (v->is_number()) {
      out = v->get<double>();
    } else {
      error(key, "expected a number");
    }
  }
}

void JsonFields::read(const std::string& key, bool& out) {
  if (const auto* v = find(key)) {
    if (v->is_boolean()) {
      out = v->get<bool>();
    } else {
      error(key, "expected true or false");
    }
  }
}

void JsonFields::read(const std::string& key, std::string& out) {
  if (const auto* v = find(key)) {
    if (v->is_string()) {
      out = v->get<std::string>();
    } else {
      error(key, "expected a string");
    }
  }
}

void JsonFields::read(const std::string& key, std::vector<std::size_t>& out) {
  if (const auto* v = find(key)) {
    if (!v->is_array()) {
      error(key, "expected an array of non-negative integers");
      return;
    }
    std::vector<std::size_t> values;
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) {
        error(key, "expected an array of non-negative integers");
        return;
      }
      values.push_back(e.get<std::size_t>());
    }
    out = std::move(values);
  }
}

void JsonFields::finish() {
  if (!valid_) return;
  for (auto it = obj_.begin(); it != obj_.end(); ++it) {
    if (!consumed_.count(it.key())) error(it.key(), "unknown key");
  }
}

}  // namespace stf
