#include "mscount/kv.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "mscount/io_util.hpp"

namespace mscount {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::string& require(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error("missing key '" + key + "'");
  return it->second;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::runtime_error("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_text_file(path));
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

double kv_double(const KeyValues& kv, const std::string& key) {
  const std::string& s = require(kv, key);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("key '" + key + "': not a number: " + s);
  }
  return v;
}

int kv_int(const KeyValues& kv, const std::string& key) {
  const std::string& s = require(kv, key);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("key '" + key + "': not an integer: " + s);
  }
  return v;
}

std::vector<int> kv_int_list(const KeyValues& kv, const std::string& key) {
  const std::string& s = require(kv, key);
  std::vector<int> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    KeyValues one{{key, trim(item)}};
    out.push_back(kv_int(one, key));
  }
  return out;
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace mscount
