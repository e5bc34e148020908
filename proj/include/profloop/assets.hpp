// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string_view>

// Files from data/ and prompts/ compiled into the binary, keyed by their
// repository-relative path (e.g. "data/catalog.json").
namespace profloop::assets {

std::optional<std::string_view> find(std::string_view name);

}  // namespace profloop::assets
