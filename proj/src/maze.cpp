#include "capsnav/maze.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

namespace capsnav {

namespace {

constexpr double kFovDegrees = 60.0;
const Rgb kCeiling{0.34, 0.37, 0.42};
const Rgb kFloor{0.21, 0.19, 0.17};
const Rgb kUniformWall{0.58, 0.55, 0.52};
const Rgb kGoalMarker{0.10, 0.95, 0.20};

struct HeadingVec {
    double x, y;
};

HeadingVec heading_vec(Heading h) {
    switch (h) {
        case Heading::kNorth: return {0.0, -1.0};
        case Heading::kEast: return {1.0, 0.0};
        case Heading::kSouth: return {0.0, 1.0};
        case Heading::kWest: return {-1.0, 0.0};
    }
    throw ContractError("invalid heading");
}

Heading heading_from_char(char c) {
    switch (c) {
        case 'N': return Heading::kNorth;
        case 'E': return Heading::kEast;
        case 'S': return Heading::kSouth;
        case 'W': return Heading::kWest;
        default: throw LoadError(std::string("invalid heading character: ") + c);
    }
}

}  // namespace

Scenario scenario_from_string(const std::string& s) {
    if (s == "mwh") return Scenario::kMwh;
    if (s == "mwh_m") return Scenario::kMwhM;
    if (s == "mwh_g") return Scenario::kMwhG;
    if (s == "mini") return Scenario::kMini;
    if (s == "mini_rot") return Scenario::kMiniRot;
    throw ConfigError("unknown scenario: " + s +
                      " (expected mwh | mwh_m | mwh_g | mini | mini_rot)");
}

Sparsity sparsity_from_string(const std::string& s) {
    if (s == "dense") return Sparsity::kDense;
    if (s == "sparse") return Sparsity::kSparse;
    throw ConfigError("unknown sparsity: " + s + " (expected dense | sparse)");
}

TextureMode texture_from_string(const std::string& s) {
    if (s == "uniform") return TextureMode::kUniform;
    if (s == "varied") return TextureMode::kVaried;
    throw ConfigError("unknown texture mode: " + s + " (expected uniform | varied)");
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::kMwh: return "mwh";
        case Scenario::kMwhM: return "mwh_m";
        case Scenario::kMwhG: return "mwh_g";
        case Scenario::kMini: return "mini";
        case Scenario::kMiniRot: return "mini_rot";
    }
    throw ConfigError("invalid scenario");
}

std::string to_string(Sparsity s) { return s == Sparsity::kDense ? "dense" : "sparse"; }
std::string to_string(TextureMode t) { return t == TextureMode::kUniform ? "uniform" : "varied"; }

// ---- map parsing ----

MazeSpec parse_map_text(const std::string& text, TextureMode mode) {
    MazeSpec spec;
    spec.texture_mode = mode;
    bool have_goal = false, have_sparse = false;

    std::istringstream in(text);
    std::string line, section;
    bool grid_done = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (section != "grid") {
            if (line.empty() || line[0] == '#') continue;
        }
        if (!line.empty() && line[0] == '[') {
            std::size_t close = line.find(']');
            if (close == std::string::npos) throw LoadError("malformed section header: " + line);
            section = line.substr(1, close - 1);
            if (section == "end") grid_done = true;
            continue;
        }
        if (grid_done) continue;
        std::istringstream ls(line);
        if (section == "meta") {
            std::string key, eq, value;
            ls >> key >> eq >> value;
            if (eq != "=") throw LoadError("malformed meta line: " + line);
            if (key == "name") spec.name = value;
            else if (key == "rooms") spec.room_count = std::stoi(value);
        } else if (section == "textures") {
            char ch;
            std::string eq;
            int r, g, b;
            if (!(ls >> ch >> eq >> r >> g >> b) || eq != "=")
                throw LoadError("malformed texture line: " + line);
            spec.palette[ch] = Rgb{r / 255.0, g / 255.0, b / 255.0};
        } else if (section == "goal") {
            if (!(ls >> spec.goal_x >> spec.goal_y)) throw LoadError("malformed goal line: " + line);
            have_goal = true;
        } else if (section == "sparse") {
            char h;
            if (!(ls >> spec.sparse_x >> spec.sparse_y >> h))
                throw LoadError("malformed sparse line: " + line);
            spec.sparse_heading = heading_from_char(h);
            have_sparse = true;
        } else if (section == "dense") {
            int x, y;
            if (!(ls >> x >> y)) throw LoadError("malformed dense line: " + line);
            spec.dense_starts.emplace_back(x, y);
        } else if (section == "grid") {
            if (line.empty()) continue;
            spec.grid.push_back(line);
        } else if (section.empty()) {
            throw LoadError("content before first section: " + line);
        } else {
            throw LoadError("unknown section: " + section);
        }
    }

    if (spec.grid.empty()) throw LoadError("map has no grid");
    spec.height = static_cast<int>(spec.grid.size());
    spec.width = static_cast<int>(spec.grid[0].size());
    for (const std::string& row : spec.grid)
        if (static_cast<int>(row.size()) != spec.width)
            throw LoadError("map grid is not rectangular");
    if (!have_goal || !have_sparse) throw LoadError("map is missing goal or sparse start");

    // border must be closed so rays and moves always terminate
    for (int x = 0; x < spec.width; ++x)
        if (!spec.is_wall(x, 0) || !spec.is_wall(x, spec.height - 1))
            throw LoadError("map border is not closed (top/bottom)");
    for (int y = 0; y < spec.height; ++y)
        if (!spec.is_wall(0, y) || !spec.is_wall(spec.width - 1, y))
            throw LoadError("map border is not closed (left/right)");

    // every wall char must be declared; room count matches distinct ids
    std::map<char, int> used;
    for (const std::string& row : spec.grid)
        for (char c : row)
            if (c != '.') used[c]++;
    for (const auto& [ch, n] : used) {
        (void)n;
        if (!spec.palette.count(ch))
            throw LoadError(std::string("wall character '") + ch + "' has no texture entry");
    }
    if (static_cast<int>(used.size()) != spec.room_count)
        throw LoadError("room count " + std::to_string(spec.room_count) + " does not match " +
                        std::to_string(used.size()) + " distinct wall textures");

    // distinct palette colors so varied mode is actually varied
    std::vector<std::pair<double, std::pair<double, double>>> colors;
    for (const auto& [ch, c] : spec.palette) {
        (void)ch;
        colors.push_back({c.r, {c.g, c.b}});
    }
    std::sort(colors.begin(), colors.end());
    if (std::adjacent_find(colors.begin(), colors.end()) != colors.end())
        throw LoadError("texture palette colors are not pairwise distinct");

    auto check_floor = [&](int x, int y, const char* what) {
        if (!spec.in_bounds(x, y) || spec.is_wall(x, y))
            throw LoadError(std::string(what) + " (" + std::to_string(x) + ", " +
                            std::to_string(y) + ") is not a floor cell");
    };
    check_floor(spec.goal_x, spec.goal_y, "goal");
    check_floor(spec.sparse_x, spec.sparse_y, "sparse start");
    if (static_cast<int>(spec.dense_starts.size()) != kDenseStartCount)
        throw LoadError("map must list exactly " + std::to_string(kDenseStartCount) +
                        " dense starts, got " + std::to_string(spec.dense_starts.size()));
    for (auto [x, y] : spec.dense_starts) {
        check_floor(x, y, "dense start");
        if (spec.is_goal(x, y)) throw LoadError("dense start coincides with the goal");
    }

    // goal reachable from every start
    std::vector<int> dist = bfs_from_goal(spec);
    auto reachable = [&](int x, int y) { return dist[y * spec.width + x] >= 0; };
    if (!reachable(spec.sparse_x, spec.sparse_y))
        throw LoadError("goal is unreachable from the sparse start");
    for (auto [x, y] : spec.dense_starts)
        if (!reachable(x, y))
            throw LoadError("goal is unreachable from dense start (" + std::to_string(x) + ", " +
                            std::to_string(y) + ")");
    return spec;
}

MazeSpec load_map_file(const std::string& path, TextureMode mode) {
    std::ifstream is(path);
    if (!is) throw LoadError("cannot open map file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_map_text(ss.str(), mode);
}

std::vector<int> bfs_from_goal(const MazeSpec& spec) {
    std::vector<int> dist(static_cast<std::size_t>(spec.width) * spec.height, -1);
    std::deque<std::pair<int, int>> queue;
    dist[spec.goal_y * spec.width + spec.goal_x] = 0;
    queue.emplace_back(spec.goal_x, spec.goal_y);
    while (!queue.empty()) {
        auto [x, y] = queue.front();
        queue.pop_front();
        int d = dist[y * spec.width + x];
        const int dx[4] = {1, -1, 0, 0};
        const int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            int nx = x + dx[k], ny = y + dy[k];
            if (!spec.in_bounds(nx, ny) || spec.is_wall(nx, ny)) continue;
            if (dist[ny * spec.width + nx] >= 0) continue;
            dist[ny * spec.width + nx] = d + 1;
            queue.emplace_back(nx, ny);
        }
    }
    return dist;
}

// ---- rendering ----

Tensor render_frame(const MazeSpec& spec, const EnvState& st) {
    const int N = kFrameSize;
    Tensor frame({3, N, N});
    auto& v = frame.value();
    auto put = [&](int x, int y, const Rgb& c) {
        v[(0 * N + y) * N + x] = c.r;
        v[(1 * N + y) * N + x] = c.g;
        v[(2 * N + y) * N + x] = c.b;
    };

    const double pos_x = st.x + 0.5, pos_y = st.y + 0.5;
    const HeadingVec dir = heading_vec(st.heading);
    // camera plane perpendicular to the view direction, |plane| = tan(fov/2)
    const double plane_scale = std::tan(kFovDegrees * M_PI / 360.0);
    const double plane_x = -dir.y * plane_scale;
    const double plane_y = dir.x * plane_scale;
    const double inf = std::numeric_limits<double>::infinity();

    for (int col = 0; col < N; ++col) {
        double camera = 2.0 * (col + 0.5) / N - 1.0;
        double ray_x = dir.x + plane_x * camera;
        double ray_y = dir.y + plane_y * camera;

        int map_x = st.x, map_y = st.y;
        double delta_x = ray_x == 0.0 ? inf : std::abs(1.0 / ray_x);
        double delta_y = ray_y == 0.0 ? inf : std::abs(1.0 / ray_y);
        int step_x = ray_x < 0 ? -1 : 1;
        int step_y = ray_y < 0 ? -1 : 1;
        double side_x = ray_x < 0 ? (pos_x - map_x) * delta_x : (map_x + 1.0 - pos_x) * delta_x;
        double side_y = ray_y < 0 ? (pos_y - map_y) * delta_y : (map_y + 1.0 - pos_y) * delta_y;

        int side = 0;
        char hit = 0;
        bool hit_goal = false;
        while (true) {
            if (side_x < side_y) {
                side_x += delta_x;
                map_x += step_x;
                side = 0;
            } else {
                side_y += delta_y;
                map_y += step_y;
                side = 1;
            }
            if (spec.is_wall(map_x, map_y)) {
                hit = spec.grid[map_y][map_x];
                break;
            }
            if (spec.is_goal(map_x, map_y)) {
                hit_goal = true;
                break;
            }
        }
        double perp = side == 0 ? side_x - delta_x : side_y - delta_y;
        perp = std::max(perp, 1e-6);

        Rgb tex;
        if (hit_goal)
            tex = spec.texture_mode == TextureMode::kVaried ? kGoalMarker : kUniformWall;
        else
            tex = spec.texture_mode == TextureMode::kVaried ? spec.palette.at(hit) : kUniformWall;
        double shade = 1.0 / (1.0 + perp);
        Rgb wall{tex.r * shade, tex.g * shade, tex.b * shade};

        int line = static_cast<int>(N / perp);
        int draw_start = std::max(0, N / 2 - line / 2);
        int draw_end = std::min(N, N / 2 + (line + 1) / 2);
        for (int y = 0; y < draw_start; ++y) put(col, y, kCeiling);
        for (int y = draw_start; y < draw_end; ++y) put(col, y, wall);
        for (int y = draw_end; y < N; ++y) put(col, y, kFloor);
    }
    return frame;
}

// ---- environment ----

MazeEnv::MazeEnv(MazeSpec spec, Sparsity sparsity, std::uint64_t seed, int frameskip)
    : spec_(std::move(spec)), sparsity_(sparsity), frameskip_(frameskip) {
    if (frameskip_ < 1) throw ConfigError("frameskip must be >= 1");
    st_.rng = Rng(Rng::mix(seed, 0xE4F));
}

Tensor MazeEnv::reset() {
    if (sparsity_ == Sparsity::kSparse) {
        st_.x = spec_.sparse_x;
        st_.y = spec_.sparse_y;
        st_.heading = spec_.sparse_heading;
    } else {
        auto [x, y] = spec_.dense_starts[st_.rng.uniform_int(kDenseStartCount)];
        st_.x = x;
        st_.y = y;
        st_.heading = static_cast<Heading>(st_.rng.uniform_int(4));
    }
    st_.steps_taken = 0;
    st_.done = false;
    needs_reset_ = false;
    return render();
}

StepResult MazeEnv::step(Action a) {
    if (needs_reset_) throw ContractError("step() before reset()");
    if (st_.done) throw ContractError("step() on a finished episode");

    StepResult result;
    for (int rep = 0; rep < frameskip_ && !st_.done; ++rep) {
        switch (a) {
            case Action::kForward: {
                HeadingVec d = heading_vec(st_.heading);
                int nx = st_.x + static_cast<int>(d.x);
                int ny = st_.y + static_cast<int>(d.y);
                if (!spec_.is_wall(nx, ny)) {
                    st_.x = nx;
                    st_.y = ny;
                }
                break;
            }
            case Action::kTurnLeft:
                st_.heading = static_cast<Heading>((static_cast<int>(st_.heading) + 3) % 4);
                break;
            case Action::kTurnRight:
                st_.heading = static_cast<Heading>((static_cast<int>(st_.heading) + 1) % 4);
                break;
            case Action::kNoop:
                break;
        }
        st_.steps_taken++;
        if (spec_.is_goal(st_.x, st_.y)) {
            result.reward += 1.0;
            st_.done = true;
        } else if (st_.steps_taken >= kEpisodeCap) {
            st_.done = true;
        }
    }
    result.obs = render();
    result.done = st_.done;
    return result;
}

MazeEnv load_scenario(Scenario scenario, Sparsity sparsity, TextureMode texture,
                      std::uint64_t seed, int frameskip) {
    MazeSpec spec = parse_map_text(detail::bundled_map_text(to_string(scenario)), texture);
    return MazeEnv(std::move(spec), sparsity, seed, frameskip);
}

void write_ppm(const std::string& path, const Tensor& frame) {
    if (frame.shape() != Shape{3, kFrameSize, kFrameSize})
        throw ShapeError("write_ppm: expected [3, 42, 42] frame");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw LoadError("cannot open PPM for writing: " + path);
    os << "P6\n" << kFrameSize << " " << kFrameSize << "\n255\n";
    const int N = kFrameSize;
    for (int y = 0; y < N; ++y)
        for (int x = 0; x < N; ++x)
            for (int c = 0; c < 3; ++c) {
                double val = frame.value()[(c * N + y) * N + x];
                int byte = static_cast<int>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
                os.put(static_cast<char>(byte));
            }
    if (!os) throw LoadError("PPM write failed: " + path);
}

}  // namespace capsnav
