#include "patchforge/config.hpp"

#include <fstream>
#include <sstream>

namespace patchforge {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(strfmt("config: cannot open '%s'", file.string().c_str()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str(), file.string());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(strfmt("config %s:%d: expected 'key = value'", origin.c_str(), lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(strfmt("config %s:%d: empty key", origin.c_str(), lineno));
    if (cfg.values_.count(key))
      fail(strfmt("config %s:%d: duplicate key '%s'", origin.c_str(), lineno, key.c_str()));
    cfg.values_[key] = value;
    cfg.read_[key] = false;
  }
  return cfg;
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) > 0; }

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
  read_[key] = false;
}

std::string KeyValueConfig::raw(const std::string& key) {
  auto it = values_.find(key);
  if (it == values_.end()) fail(strfmt("config %s: missing required key '%s'", origin_.c_str(), key.c_str()));
  read_[key] = true;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) { return raw(key); }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) {
  if (!has(key)) {
    note_default(key, fallback);
    return fallback;
  }
  return raw(key);
}

int64_t KeyValueConfig::get_int(const std::string& key) {
  const std::string v = raw(key);
  size_t pos = 0;
  int64_t out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    fail(strfmt("config %s: key '%s' is not an integer: '%s'", origin_.c_str(), key.c_str(), v.c_str()));
  }
  if (pos != v.size())
    fail(strfmt("config %s: key '%s' is not an integer: '%s'", origin_.c_str(), key.c_str(), v.c_str()));
  return out;
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t fallback) {
  if (!has(key)) {
    note_default(key, std::to_string(fallback));
    return fallback;
  }
  return get_int(key);
}

double KeyValueConfig::get_double(const std::string& key) {
  const std::string v = raw(key);
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    fail(strfmt("config %s: key '%s' is not a number: '%s'", origin_.c_str(), key.c_str(), v.c_str()));
  }
  if (pos != v.size())
    fail(strfmt("config %s: key '%s' is not a number: '%s'", origin_.c_str(), key.c_str(), v.c_str()));
  return out;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) {
  if (!has(key)) {
    note_default(key, strfmt("%.17g", fallback));
    return fallback;
  }
  return get_double(key);
}

bool KeyValueConfig::get_bool(const std::string& key) {
  const std::string v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(strfmt("config %s: key '%s' is not a boolean: '%s'", origin_.c_str(), key.c_str(), v.c_str()));
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) {
  if (!has(key)) {
    note_default(key, fallback ? "true" : "false");
    return fallback;
  }
  return get_bool(key);
}

std::vector<int64_t> KeyValueConfig::get_int_list(const std::string& key, const std::string& fallback) {
  std::string v = has(key) ? raw(key) : fallback;
  if (!has(key)) note_default(key, fallback);
  std::vector<int64_t> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      fail(strfmt("config %s: key '%s' has a non-integer list item '%s'", origin_.c_str(), key.c_str(),
                  item.c_str()));
    }
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, was_read] : read_)
    if (!was_read) out.push_back(k);
  return out;
}

void KeyValueConfig::require_all_read() const {
  const auto leftover = unread_keys();
  if (!leftover.empty()) fail(strfmt("config %s: unknown key '%s'", origin_.c_str(), leftover.front().c_str()));
}

void KeyValueConfig::note_default(const std::string& key, const std::string& value) {
  if (!values_.count(key)) defaults_[key] = value;
}

void KeyValueConfig::write_resolved(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) fail(strfmt("config: cannot write '%s'", file.string().c_str()));
  out << "# resolved configuration (explicit settings plus applied defaults)\n";
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  for (const auto& [k, v] : defaults_) out << k << " = " << v << "\n";
}

}  // namespace patchforge
