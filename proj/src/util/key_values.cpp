#include "bmi/util/key_values.hpp"

#include <charconv>
#include <fstream>
#include <istream>

#include "bmi/error.hpp"

namespace bmi {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

KeyValues KeyValues::parse(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key))
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key " + key);
    kv.set(key, trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse(in, path);
}

bool KeyValues::has(const std::string& key) const { return values_.count(key) > 0; }

void KeyValues::set(const std::string& key, std::string value) {
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = std::move(value);
}

std::optional<std::string> KeyValues::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  consumed_.insert(key);
  return it->second;
}

std::string KeyValues::get_string(const std::string& key,
                                  const std::string& fallback) const {
  return raw(key).value_or(fallback);
}

std::string KeyValues::require_string(const std::string& key) const {
  auto v = raw(key);
  if (!v) throw ConfigError("missing required key " + key);
  return *v;
}

namespace {
template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || p != e)
    throw ConfigError("invalid value for " + key + ": '" + text + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + text + "'");
  }
}
}  // namespace

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto v = raw(key);
  return v ? parse_double(key, *v) : fallback;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = raw(key);
  return v ? parse_number<std::int64_t>(key, *v) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = raw(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + *v + "'");
}

std::vector<double> KeyValues::get_doubles(const std::string& key,
                                           const std::vector<double>& fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& part : split(*v, ',')) out.push_back(parse_double(key, trim(part)));
  return out;
}

std::vector<std::size_t> KeyValues::get_sizes(
    const std::string& key, const std::vector<std::size_t>& fallback) const {
  auto v = raw(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const auto& part : split(*v, ','))
    out.push_back(parse_number<std::size_t>(key, trim(part)));
  return out;
}

std::vector<std::string> KeyValues::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& k : order_)
    if (!consumed_.count(k)) out.push_back(k);
  return out;
}

}  // namespace bmi
