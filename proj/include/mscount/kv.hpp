#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mscount {

// Flat key=value text: one pair per line, '#' starts a comment line, blank
// lines ignored, surrounding whitespace trimmed. Keys are unique.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

double kv_double(const KeyValues& kv, const std::string& key);
int kv_int(const KeyValues& kv, const std::string& key);
std::vector<int> kv_int_list(const KeyValues& kv, const std::string& key);
std::string join_ints(const std::vector<int>& values);
/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace mscount
