#ifndef EVOLVER_ENV_DETAIL_HPP
#define EVOLVER_ENV_DETAIL_HPP

#include <memory>
#include <string>
#include <vector>

#include "evolver/env.hpp"

namespace evolver {

inline constexpr int kGridSize = 6;

// Cell lookup for the built-in 6x6 town map; '#' outside the map.
char gridmap_cell(int x, int y);
std::string gridmap_cell_description(char cell);

std::unique_ptr<Environment> make_gridmap(const EnvSpec& spec);
EnvironmentProfile gridmap_profile();
std::vector<std::string> gridmap_vocabulary();

std::unique_ptr<Environment> make_toolbox(const EnvSpec& spec);
EnvironmentProfile toolbox_profile();
std::vector<std::string> toolbox_vocabulary();

}  // namespace evolver

#endif  // EVOLVER_ENV_DETAIL_HPP
