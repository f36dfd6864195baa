#pragma once

#include <json.hpp>

#include "asopf/grid.hpp"

namespace asopf::detail {

nlohmann::ordered_json grid_to_json(const Grid& g);
Grid grid_from_json(const nlohmann::ordered_json& j);

}  // namespace asopf::detail
