#pragma once

// Strict JSON config reading and deterministic CSV/JSON emission.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace fblab {

using ojson = nlohmann::ordered_json;

// Config violates the schema; `pointer` locates the offending value.
struct schema_error : std::runtime_error {
  schema_error(const std::string& pointer, const std::string& what)
      : std::runtime_error((pointer.empty() ? std::string("/") : pointer) + ": " + what), pointer(pointer) {}
  std::string pointer;
};

inline std::string pointer_escape(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

// Reads one JSON object, recording every value it hands out (defaults
// included) into `resolved`. finish() rejects keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const ojson* obj, std::string pointer) : obj_(obj), ptr_(std::move(pointer)) {
    if (obj_ && !obj_->is_object()) throw schema_error(ptr_, "expected an object");
  }

  const std::string& pointer() const { return ptr_; }
  std::string child(const std::string& key) const { return ptr_ + "/" + pointer_escape(key); }
  bool has(const std::string& key) const { return obj_ && obj_->contains(key); }

  double number(const std::string& key, std::optional<double> def = std::nullopt) {
    const ojson* v = get(key);
    double x = 0.0;
    if (!v) {
      if (!def) throw schema_error(child(key), "required number is missing");
      x = *def;
    } else {
      if (!v->is_number()) throw schema_error(child(key), "expected a number");
      x = v->get<double>();
      if (!std::isfinite(x)) throw schema_error(child(key), "expected a finite number");
    }
    resolved[key] = x;
    return x;
  }

  std::uint64_t integer(const std::string& key, std::optional<std::uint64_t> def = std::nullopt) {
    const ojson* v = get(key);
    std::uint64_t x = 0;
    if (!v) {
      if (!def) throw schema_error(child(key), "required integer is missing");
      x = *def;
    } else {
      if (v->is_number_unsigned()) x = v->get<std::uint64_t>();
      else if (v->is_number_integer() && v->get<std::int64_t>() >= 0) x = static_cast<std::uint64_t>(v->get<std::int64_t>());
      else throw schema_error(child(key), "expected a non-negative integer");
    }
    resolved[key] = x;
    return x;
  }

  bool boolean(const std::string& key, bool def) {
    const ojson* v = get(key);
    bool x = def;
    if (v) {
      if (!v->is_boolean()) throw schema_error(child(key), "expected true or false");
      x = v->get<bool>();
    }
    resolved[key] = x;
    return x;
  }

  std::string text(const std::string& key, std::optional<std::string> def, const std::vector<std::string>& allowed = {}) {
    const ojson* v = get(key);
    std::string x;
    if (!v) {
      if (!def) throw schema_error(child(key), "required string is missing");
      x = *def;
    } else {
      if (!v->is_string()) throw schema_error(child(key), "expected a string");
      x = v->get<std::string>();
    }
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), x) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw schema_error(child(key), "'" + x + "' is not one of {" + list + "}");
    }
    resolved[key] = x;
    return x;
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def = std::nullopt) {
    const ojson* v = get(key);
    std::vector<double> x;
    if (!v) {
      if (!def) throw schema_error(child(key), "required array is missing");
      x = *def;
    } else {
      if (!v->is_array() || v->empty()) throw schema_error(child(key), "expected a non-empty array of numbers");
      for (std::size_t i = 0; i < v->size(); ++i) {
        const auto& e = (*v)[i];
        if (!e.is_number() || !std::isfinite(e.get<double>()))
          throw schema_error(child(key) + "/" + std::to_string(i), "expected a finite number");
        x.push_back(e.get<double>());
      }
    }
    resolved[key] = x;
    return x;
  }

  // Nested object, handled by its own reader; nullptr when absent.
  const ojson* block(const std::string& key) { return get(key); }

  // Value checks after reading; the message names the pointer.
  void require(bool ok, const std::string& key, const std::string& what) const {
    if (!ok) throw schema_error(child(key), what);
  }

  void finish() const {
    if (!obj_) return;
    for (const auto& [k, v] : obj_->items())
      if (!seen_.count(k)) throw schema_error(child(k), "unknown key");
  }

  ojson resolved = ojson::object();

 private:
  const ojson* get(const std::string& key) {
    seen_.insert(key);
    if (!obj_) return nullptr;
    auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  const ojson* obj_;
  std::string ptr_;
  std::set<std::string> seen_;
};

// Full-precision scientific notation; non-finite values spelled nan/inf.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17e", x);
  return buf;
}

// Short form for messages.
inline std::string compact_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

struct CsvTable {
  std::vector<std::string> columns;  // names carry units, e.g. frequency_hz
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row) {
    if (row.size() != columns.size()) throw std::logic_error("CsvTable: row width mismatch");
    rows.push_back(std::move(row));
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (text.empty() || text.back() != '\n') f << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline std::string to_csv(const CsvTable& t) {
  std::string s;
  for (std::size_t i = 0; i < t.columns.size(); ++i) s += (i ? "," : "") + t.columns[i];
  s += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) s += ',';
      s += format_double(r[i]);
    }
    s += '\n';
  }
  return s;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) { write_text(path, to_csv(t)); }

// NaN and infinities become null, as JSON has no spelling for them.
inline ojson json_number(double x) { return std::isfinite(x) ? ojson(x) : ojson(nullptr); }

inline void write_json(const std::filesystem::path& path, const ojson& j) { write_text(path, j.dump(2)); }

}  // namespace fblab
