#pragma once

// Validator for the JSON Schema subset used by schemas/api.schema.json:
// type, properties, required, additionalProperties, items, enum, const,
// minimum/maximum (and exclusive forms), minItems/maxItems, minLength, anyOf,
// oneOf, and local "#/$defs/..." references.

#include <string>
#include <vector>

#include <json.hpp>

namespace ragtrace::testing {

class SchemaValidator {
 public:
  explicit SchemaValidator(nlohmann::json root) : root_(std::move(root)) {}

  /// Problems found validating `value` against $defs[def]; empty when valid.
  std::vector<std::string> validate(const nlohmann::json& value, const std::string& def) const {
    std::vector<std::string> errors;
    check(value, root_.at("$defs").at(def), "$", errors);
    return errors;
  }

 private:
  const nlohmann::json& resolve(const std::string& ref) const {
    const std::string prefix = "#/$defs/";
    if (ref.rfind(prefix, 0) != 0) throw std::runtime_error("unsupported $ref " + ref);
    return root_.at("$defs").at(ref.substr(prefix.size()));
  }

  static bool has_type(const nlohmann::json& v, const std::string& t) {
    if (t == "null") return v.is_null();
    if (t == "boolean") return v.is_boolean();
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "number") return v.is_number();
    if (t == "integer") {
      if (v.is_number_integer()) return true;
      return v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>()));
    }
    throw std::runtime_error("unknown schema type " + t);
  }

  void check(const nlohmann::json& v, const nlohmann::json& s, const std::string& path,
             std::vector<std::string>& errors) const {
    if (s.is_boolean()) {
      if (!s.get<bool>()) errors.push_back(path + ": disallowed");
      return;
    }
    if (auto it = s.find("$ref"); it != s.end()) check(v, resolve(it->get<std::string>()), path, errors);
    if (auto it = s.find("type"); it != s.end()) {
      bool ok = false;
      if (it->is_string()) {
        ok = has_type(v, it->get<std::string>());
      } else {
        for (const auto& t : *it) ok = ok || has_type(v, t.get<std::string>());
      }
      if (!ok) {
        errors.push_back(path + ": expected type " + it->dump() + ", got " + v.type_name());
        return;
      }
    }
    if (auto it = s.find("enum"); it != s.end()) {
      bool found = false;
      for (const auto& e : *it) found = found || e == v;
      if (!found) errors.push_back(path + ": " + v.dump() + " not in enum " + it->dump());
    }
    if (auto it = s.find("const"); it != s.end() && *it != v)
      errors.push_back(path + ": expected const " + it->dump());
    if (v.is_number()) {
      const double x = v.get<double>();
      if (auto it = s.find("minimum"); it != s.end() && x < it->get<double>())
        errors.push_back(path + ": " + v.dump() + " < minimum " + it->dump());
      if (auto it = s.find("maximum"); it != s.end() && x > it->get<double>())
        errors.push_back(path + ": " + v.dump() + " > maximum " + it->dump());
      if (auto it = s.find("exclusiveMinimum"); it != s.end() && x <= it->get<double>())
        errors.push_back(path + ": " + v.dump() + " <= exclusiveMinimum " + it->dump());
      if (auto it = s.find("exclusiveMaximum"); it != s.end() && x >= it->get<double>())
        errors.push_back(path + ": " + v.dump() + " >= exclusiveMaximum " + it->dump());
    }
    if (v.is_string()) {
      if (auto it = s.find("minLength"); it != s.end() && v.get<std::string>().size() < it->get<std::size_t>())
        errors.push_back(path + ": string shorter than " + it->dump());
    }
    if (v.is_array()) {
      if (auto it = s.find("minItems"); it != s.end() && v.size() < it->get<std::size_t>())
        errors.push_back(path + ": fewer than " + it->dump() + " items");
      if (auto it = s.find("maxItems"); it != s.end() && v.size() > it->get<std::size_t>())
        errors.push_back(path + ": more than " + it->dump() + " items");
      if (auto it = s.find("items"); it != s.end())
        for (std::size_t i = 0; i < v.size(); ++i) check(v[i], *it, path + "[" + std::to_string(i) + "]", errors);
    }
    if (v.is_object()) {
      if (auto it = s.find("required"); it != s.end())
        for (const auto& r : *it)
          if (!v.contains(r.get<std::string>())) errors.push_back(path + ": missing property " + r.dump());
      const auto props = s.find("properties");
      if (props != s.end())
        for (const auto& [k, sub] : props->items())
          if (v.contains(k)) check(v.at(k), sub, path + "." + k, errors);
      if (auto it = s.find("additionalProperties"); it != s.end()) {
        for (const auto& [k, sub] : v.items()) {
          if (props != s.end() && props->contains(k)) continue;
          check(sub, *it, path + "." + k, errors);
        }
      }
    }
    if (auto it = s.find("anyOf"); it != s.end()) {
      bool any = false;
      for (const auto& alt : *it) {
        std::vector<std::string> sub;
        check(v, alt, path, sub);
        any = any || sub.empty();
      }
      if (!any) errors.push_back(path + ": matches no anyOf alternative");
    }
    if (auto it = s.find("oneOf"); it != s.end()) {
      int count = 0;
      for (const auto& alt : *it) {
        std::vector<std::string> sub;
        check(v, alt, path, sub);
        count += sub.empty() ? 1 : 0;
      }
      if (count != 1) errors.push_back(path + ": matches " + std::to_string(count) + " oneOf alternatives");
    }
  }

  nlohmann::json root_;
};

}  // namespace ragtrace::testing
