/*
 Copyright 2026 The diffop authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <string>

#include <json.hpp>

#include "diffop/errors.hpp"
#include "diffop/types.hpp"

namespace diffop::jsonio {

using json = nlohmann::json;

/// Formats a double with 17 significant digits, enough to round-trip any
/// IEEE-754 binary64 value through text.
std::string fmt_g17(double x);

/// Serializes with every float printed via fmt_g17. Integers stay integers.
/// indent < 0 gives a single line.
std::string dump(const json& j, int indent = 2);

json vec_to_json(const Vec& v);
json mat_to_json(const Mat& m);
Vec vec_from_json(const json& j);
Mat mat_from_json(const json& j);

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j, int indent = 2);

}  // namespace diffop::jsonio
