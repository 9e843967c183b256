#include <array>
#include <sstream>

#include "evolver/env.hpp"
#include "evolver/env_detail.hpp"

namespace evolver {

namespace {

// 6x6 town map. Roads form two north-south avenues joined at the top, the
// middle and the bottom; the middle link crosses a traffic light.
//   R road, L traffic light, M home, S school, H hospital, F factory,
//   . open ground
constexpr std::array<const char*, kGridSize> kMap = {
    "MRRRRS",  // y=0
    ".R..R.",  // y=1
    ".RLRR.",  // y=2
    ".R..R.",  // y=3
    ".RRRR.",  // y=4
    "HR..RF",  // y=5
};

const char* kBuildingNames[] = {"home", "school", "hospital", "factory"};

std::string building_name(char c) {
    switch (c) {
        case 'M': return "home";
        case 'S': return "school";
        case 'H': return "hospital";
        case 'F': return "factory";
        default: return "";
    }
}

struct Dir {
    const char* name;
    int dx, dy;
};
constexpr std::array<Dir, 4> kDirs = {{{"north", 0, -1}, {"south", 0, 1},
                                       {"east", 1, 0}, {"west", -1, 0}}};

}  // namespace

char gridmap_cell(int x, int y) {
    if (x < 0 || x >= kGridSize || y < 0 || y >= kGridSize) return '#';  // map edge
    return kMap[static_cast<size_t>(y)][static_cast<size_t>(x)];
}

std::string gridmap_cell_description(char c) {
    switch (c) {
        case 'R': return "road";
        case 'L': return "traffic light";
        case '.': return "open ground";
        case '#': return "the map edge";
        default: return building_name(c);
    }
}

namespace {

class GridMapEnv : public Environment {
public:
    explicit GridMapEnv(const EnvSpec& spec) {
        auto start = spec.config.find("start");
        if (start != spec.config.end()) {
            std::istringstream in(start->second);
            char comma;
            if (!(in >> x_ >> comma >> y_) || comma != ',')
                throw RegistryError("gridmap: malformed start '" + start->second + "'");
        }
        char c = gridmap_cell(x_, y_);
        if (c != 'R' && c != 'L')
            throw RegistryError("gridmap: start cell is not a road");
        auto goal = spec.config.find("goal");
        if (goal != spec.config.end()) goal_ = goal->second;
    }

    std::string state() const override { return position_text("You are on road"); }

    StepOutcome step(const std::string& action) override {
        if (done_) {
            return {"the episode has ended. " + position_text("You are at the " + entered_),
                    true,
                    {}};
        }
        std::istringstream in(action);
        std::string op, arg;
        in >> op;
        std::getline(in, arg);
        arg = normalize_whitespace(arg);

        if (op == "move") {
            const Dir* dir = find_dir(arg);
            if (!dir)
                return {"unknown operation direction. " + position_text("You are on road"),
                        false,
                        {{"error", "bad_argument"}}};
            char target = gridmap_cell(x_ + dir->dx, y_ + dir->dy);
            if (target == 'R') {
                x_ += dir->dx;
                y_ += dir->dy;
                return {position_text("You moved " + arg + "."), false, {}};
            }
            if (target == 'L')
                return {"You cannot move " + arg +
                            ": a traffic light requires wait_and_cross. " +
                            position_text("You are on road"),
                        false,
                        {}};
            return {"You cannot move " + arg + ": " + gridmap_cell_description(target) +
                        " blocks the way. " + position_text("You are on road"),
                    false,
                    {}};
        }
        if (op == "wait_and_cross") {
            const Dir* dir = find_dir(arg);
            if (!dir)
                return {"unknown operation direction. " + position_text("You are on road"),
                        false,
                        {{"error", "bad_argument"}}};
            char adjacent = gridmap_cell(x_ + dir->dx, y_ + dir->dy);
            char beyond = gridmap_cell(x_ + 2 * dir->dx, y_ + 2 * dir->dy);
            if (adjacent != 'L')
                return {"You cannot cross " + arg + ": no traffic light there. " +
                            position_text("You are on road"),
                        false,
                        {}};
            if (beyond != 'R')
                return {"You cannot cross " + arg + ": no road beyond the light. " +
                            position_text("You are on road"),
                        false,
                        {}};
            x_ += 2 * dir->dx;
            y_ += 2 * dir->dy;
            return {position_text("You waited for the signal and crossed " + arg + "."),
                    false,
                    {}};
        }
        if (op == "enter") {
            std::string target_building;
            int bx = 0, by = 0;
            int n_adjacent = 0;
            for (const Dir& d : kDirs) {
                char c = gridmap_cell(x_ + d.dx, y_ + d.dy);
                std::string b = building_name(c);
                if (b.empty()) continue;
                if (arg.empty() || arg == b) {
                    target_building = b;
                    bx = x_ + d.dx;
                    by = y_ + d.dy;
                    ++n_adjacent;
                }
            }
            if (n_adjacent == 0)
                return {"nothing to enter here. " + position_text("You are on road"),
                        false,
                        {}};
            x_ = bx;
            y_ = by;
            done_ = true;
            entered_ = target_building;
            return {"You entered the " + target_building + ".", true, {}};
        }
        return {"unknown operation '" + op + "'. " + position_text("You are on road"),
                false,
                {{"error", "unknown_operation"}}};
    }

    EvalOutcome evaluate(const Task& task) const override {
        std::string goal = goal_;
        for (const char* b : kBuildingNames) {
            if (task.query.find(b) != std::string::npos) {
                goal = b;
                break;
            }
        }
        bool at_goal = done_ && entered_ == goal;
        return {at_goal ? 1.0 : 0.0,
                at_goal ? "agent at goal " + goal : "agent not at goal " + goal};
    }

    std::vector<std::string> action_vocabulary() const override {
        return builtin_action_vocabulary("gridmap");
    }

    bool done() const override { return done_; }

private:
    static const Dir* find_dir(const std::string& name) {
        for (const Dir& d : kDirs)
            if (name == d.name) return &d;
        return nullptr;
    }

    std::string position_text(const std::string& prefix) const {
        std::ostringstream out;
        out << prefix << " at (" << x_ << "," << y_ << ").";
        for (const Dir& d : kDirs)
            out << " " << d.name << ": "
                << gridmap_cell_description(gridmap_cell(x_ + d.dx, y_ + d.dy)) << ";";
        return out.str();
    }

    int x_ = 1, y_ = 2;
    bool done_ = false;
    std::string entered_;
    std::string goal_ = "hospital";
};

}  // namespace

std::unique_ptr<Environment> make_gridmap(const EnvSpec& spec) {
    return std::make_unique<GridMapEnv>(spec);
}

EnvironmentProfile gridmap_profile() {
    EnvironmentProfile p;
    p.entities = {
        {"map", "a town map with navigable roads and several points of interest"},
        {"hospital", "a building providing medical care"},
        {"school", "a building for classes"},
        {"factory", "an industrial building"},
        {"home", "a residential building"},
    };
    p.attributes = {
        {"road", "a traversable pathway", "map"},
        {"architecture", "a structure such as hospital, school, home, or factory", "map"},
        {"traffic_light", "a signal requiring agents to wait before crossing", "map"},
    };
    p.operations = {
        {"move", "move to an adjacent location"},
        {"wait_and_cross", "wait for the signal to change and cross the intersection"},
        {"enter", "enter the nearest building"},
    };
    return p;
}

std::vector<std::string> gridmap_vocabulary() {
    return {"move north", "move south", "move east", "move west",
            "wait_and_cross north", "wait_and_cross south", "wait_and_cross east",
            "wait_and_cross west", "enter"};
}

}  // namespace evolver
