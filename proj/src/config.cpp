// Copyright 2026 The cfglab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cfglab/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cfglab/common.hpp"

namespace cfglab {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

double parse_double(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    fail(ErrorCode::kInvalidConfig,
         std::string(what) + ": expected a number, got '" + t + "'");
  }
  return v;
}

long long parse_int(std::string_view s, std::string_view what) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    fail(ErrorCode::kInvalidConfig,
         std::string(what) + ": expected an integer, got '" + t + "'");
  }
  return v;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

Config Config::parse(std::string_view text, std::string_view source) {
  Config cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(lineno);
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidConfig, where + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) fail(ErrorCode::kInvalidConfig, where + ": empty key");
    if (cfg.has(key)) fail(ErrorCode::kInvalidConfig, where + ": duplicate key '" + key + "'");
    cfg.values_[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return cfg;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void Config::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    fail(ErrorCode::kInvalidConfig, "override '" + std::string(assignment) + "' lacks '='");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::optional<std::string> Config::find(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return find(key).value_or(fallback);
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto v = find(key);
  return v ? static_cast<int>(parse_int(*v, key)) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = find(key);
  return v ? static_cast<std::uint64_t>(parse_int(*v, key)) : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = find(key);
  return v ? parse_double(*v, key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  fail(ErrorCode::kInvalidConfig, key + ": expected a boolean, got '" + *v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key,
                                          const std::vector<std::string>& fallback) const {
  const auto v = find(key);
  return v ? split_list(*v) : fallback;
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& s : split_list(*v)) out.push_back(parse_double(s, key));
  return out;
}

std::vector<int> Config::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::vector<int> out;
  for (const auto& s : split_list(*v)) out.push_back(static_cast<int>(parse_int(s, key)));
  return out;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace cfglab
