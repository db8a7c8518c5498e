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

#ifndef MOELORA_DATAIO_HPP_
#define MOELORA_DATAIO_HPP_

#include <string>
#include <string_view>
#include <vector>

#include "moelora/corpus.hpp"

namespace moelora {

// Line-delimited JSON. A sample line is
//   {"task": 2, "tokens": [...], "mask": [...], "probe": false}
// where "mask" and "probe" are optional (default: all ones except index 0,
// false). A probe line is
//   {"task": 2, "context": [...], "options": [a, b, c, d], "answer": 1}
// Blank lines and lines starting with '#' are ignored. Parse failures raise
// InputError naming the line number.
std::vector<Sample> parse_samples(std::string_view text);
std::vector<Probe> parse_probes(std::string_view text);
std::string samples_to_jsonl(const std::vector<Sample>& samples);
std::string probes_to_jsonl(const std::vector<Probe>& probes);

std::string read_text_file(const std::string& path);
// Writes via a temporary file and rename.
void write_text_file(const std::string& path, std::string_view text);

}  // namespace moelora

#endif  // MOELORA_DATAIO_HPP_
