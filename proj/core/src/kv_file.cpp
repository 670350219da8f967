#include "vtcal/kv_file.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vtcal/errors.hpp"

namespace vtcal {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '.' || c == '-';
    if (!ok) return false;
  }
  return true;
}

template <typename T>
T parse_number(std::string_view key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + text + "'");
  }
  return value;
}

}  // namespace

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw NumericError("format_double failed");
  return std::string(buf, ptr);
}

std::string fingerprint_of(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

KeyValueFile KeyValueFile::parse(std::string_view text, std::string_view source) {
  KeyValueFile kv;
  kv.source_ = source;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!valid_key(key)) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": bad key '" +
                        std::string(key) + "'");
    }
    if (kv.contains(key)) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": duplicate key '" +
                        std::string(key) + "'");
    }
    kv.entries_.emplace_back(std::string(key), std::string(value));
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueFile::set(std::string_view key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::string(key), std::move(value));
}

void KeyValueFile::set(std::string_view key, double value) {
  if (!std::isfinite(value)) throw NumericError("config key '" + std::string(key) + "' not finite");
  set(key, format_double(value));
}

void KeyValueFile::set(std::string_view key, std::int64_t value) { set(key, std::to_string(value)); }
void KeyValueFile::set(std::string_view key, std::uint64_t value) { set(key, std::to_string(value)); }
void KeyValueFile::set(std::string_view key, bool value) {
  set(key, std::string(value ? "true" : "false"));
}

std::optional<std::string> KeyValueFile::find(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

void KeyValueFile::read(std::string_view key, double& out) const {
  if (auto v = find(key)) out = parse_number<double>(key, *v);
}

void KeyValueFile::read(std::string_view key, int& out) const {
  if (auto v = find(key)) out = parse_number<int>(key, *v);
}

void KeyValueFile::read(std::string_view key, std::uint64_t& out) const {
  if (auto v = find(key)) out = parse_number<std::uint64_t>(key, *v);
}

void KeyValueFile::read(std::string_view key, bool& out) const {
  if (auto v = find(key)) {
    if (*v == "true" || *v == "1") {
      out = true;
    } else if (*v == "false" || *v == "0") {
      out = false;
    } else {
      throw ConfigError("config key '" + std::string(key) + "': expected true/false, got '" + *v + "'");
    }
  }
}

void KeyValueFile::read(std::string_view key, std::string& out) const {
  if (auto v = find(key)) out = *v;
}

void KeyValueFile::throw_unknown(const std::string& key) const {
  throw ConfigError(source_ + ": unknown key '" + key + "'");
}

std::string KeyValueFile::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << serialize();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace vtcal
