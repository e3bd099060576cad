#include "schema_check.hpp"

#include <fstream>
#include <regex>

namespace vseam::testing {
namespace {

using nlohmann::json;

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<long long>(v.get<double>()));
  if (t == "number") return v.is_number();
  return false;
}

struct Checker {
  const json& root;
  std::vector<std::string> errors;

  const json& resolve(const json& s) const {
    if (!s.is_object() || !s.contains("$ref")) return s;
    const auto ref = s["$ref"].get<std::string>();
    if (ref.rfind("#/", 0) != 0) throw std::runtime_error("unsupported $ref " + ref);
    return root.at(json::json_pointer(ref.substr(1)));
  }

  void fail(const std::string& at, const std::string& what) { errors.push_back((at.empty() ? "/" : at) + ": " + what); }

  void check(const json& v, const json& raw, const std::string& at) {
    const json& s = resolve(raw);
    if (s.contains("type")) {
      bool ok = false;
      if (s["type"].is_array()) {
        for (const auto& t : s["type"]) ok = ok || has_type(v, t.get<std::string>());
      } else {
        ok = has_type(v, s["type"].get<std::string>());
      }
      if (!ok) return fail(at, "expected type " + s["type"].dump() + ", got " + v.type_name());
    }
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s["enum"]) found = found || e == v;
      if (!found) fail(at, v.dump() + " not in " + s["enum"].dump());
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>()) fail(at, "below minimum");
      if (s.contains("maximum") && x > s["maximum"].get<double>()) fail(at, "above maximum");
    }
    if (v.is_string() && s.contains("pattern") &&
        !std::regex_search(v.get<std::string>(), std::regex(s["pattern"].get<std::string>())))
      fail(at, "\"" + v.get<std::string>() + "\" does not match " + s["pattern"].get<std::string>());
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& r : s["required"])
          if (!v.contains(r.get<std::string>())) fail(at, "missing " + r.get<std::string>());
      const json props = s.value("properties", json::object());
      for (const auto& [k, child] : v.items()) {
        if (props.contains(k)) {
          check(child, props[k], at + "/" + k);
        } else if (s.contains("additionalProperties")) {
          const auto& extra = s["additionalProperties"];
          if (extra.is_boolean()) {
            if (!extra.get<bool>()) fail(at, "unexpected property " + k);
          } else {
            check(child, extra, at + "/" + k);
          }
        }
      }
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) fail(at, "too few items");
      if (s.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], at + "/" + std::to_string(i));
    }
  }
};

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

}  // namespace

std::vector<std::string> schema_errors(const json& doc, const json& schema) {
  Checker c{schema, {}};
  c.check(doc, schema, "");
  return c.errors;
}

std::vector<std::string> schema_errors(const std::filesystem::path& doc, const std::filesystem::path& schema) {
  return schema_errors(read_json(doc), read_json(schema));
}

}  // namespace vseam::testing
