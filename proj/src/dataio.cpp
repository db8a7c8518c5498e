/* Copyright 2026 The moelora Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "moelora/dataio.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "moelora/errors.hpp"

namespace moelora {

namespace {

using nlohmann::json;

template <typename F>
void for_each_record(std::string_view text, F&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string_view::npos || line[first] == '#') continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::vector<std::int32_t> token_list(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) throw InputError(std::string("missing array '") + key + "'");
  return j.at(key).get<std::vector<std::int32_t>>();
}

}  // namespace

std::vector<Sample> parse_samples(std::string_view text) {
  std::vector<Sample> out;
  for_each_record(text, [&](const json& j) {
    Sample s;
    s.task_id = j.value("task", 0);
    s.tokens = token_list(j, "tokens");
    if (s.tokens.size() < 2) throw InputError("a sample needs at least 2 tokens");
    if (j.contains("mask")) {
      s.loss_mask = j.at("mask").get<std::vector<std::uint8_t>>();
      if (s.loss_mask.size() != s.tokens.size()) throw InputError("mask and tokens differ in length");
    } else {
      s.loss_mask.assign(s.tokens.size(), 1);
      s.loss_mask[0] = 0;
    }
    s.is_probe = j.value("probe", false);
    out.push_back(std::move(s));
  });
  return out;
}

std::vector<Probe> parse_probes(std::string_view text) {
  std::vector<Probe> out;
  for_each_record(text, [&](const json& j) {
    Probe p;
    p.task_id = j.value("task", 0);
    p.context = token_list(j, "context");
    const auto options = token_list(j, "options");
    if (options.size() != p.options.size()) {
      throw InputError("expected " + std::to_string(p.options.size()) + " options, got " +
                       std::to_string(options.size()));
    }
    std::copy(options.begin(), options.end(), p.options.begin());
    p.answer = j.at("answer").get<int>();
    out.push_back(std::move(p));
  });
  return out;
}

std::string samples_to_jsonl(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["task"] = s.task_id;
    j["tokens"] = s.tokens;
    j["mask"] = s.loss_mask;
    j["probe"] = s.is_probe;
    out += j.dump() + "\n";
  }
  return out;
}

std::string probes_to_jsonl(const std::vector<Probe>& probes) {
  std::string out;
  for (const auto& p : probes) {
    nlohmann::ordered_json j;
    j["task"] = p.task_id;
    j["context"] = p.context;
    j["options"] = p.options;
    j["answer"] = p.answer;
    out += j.dump() + "\n";
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace moelora
