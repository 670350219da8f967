#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vtcal {

/// Plain-text `key = value` configuration format.
///
/// One entry per line; `#` starts a comment; blank lines are ignored; keys are
/// dotted identifiers (`calib.lambda_s`). Values are written in their shortest
/// round-trip form, so serialize() followed by parse() is lossless. Entry order
/// is preserved and is part of the canonical form used for fingerprints.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, std::string_view source = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  void set(std::string_view key, std::string value);
  void set(std::string_view key, double value);
  void set(std::string_view key, std::int64_t value);
  void set(std::string_view key, std::uint64_t value);
  void set(std::string_view key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(std::string_view key, bool value);

  std::optional<std::string> find(std::string_view key) const;
  bool contains(std::string_view key) const { return find(key).has_value(); }

  // Overwrite `out` when the key is present; throw ConfigError on malformed values.
  void read(std::string_view key, double& out) const;
  void read(std::string_view key, int& out) const;
  void read(std::string_view key, std::uint64_t& out) const;
  void read(std::string_view key, bool& out) const;
  void read(std::string_view key, std::string& out) const;

  // Throws ConfigError listing the first key not accepted by `known`.
  template <typename Pred>
  void require_known(Pred known) const {
    for (const auto& [k, v] : entries_) {
      if (!known(k)) throw_unknown(k);
    }
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

 private:
  [[noreturn]] void throw_unknown(const std::string& key) const;

  std::string source_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_double(double value);

// Writes `text` verbatim; throws IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// FNV-1a 64-bit over `text`, rendered as 16 lowercase hex digits.
std::string fingerprint_of(std::string_view text);

}  // namespace vtcal
