#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "capsnav/tensor.hpp"

namespace capsnav {

inline constexpr int kEpisodeCap = 2100;
inline constexpr int kDenseStartCount = 17;
inline constexpr int kFrameSize = 42;

enum class Scenario { kMwh, kMwhM, kMwhG, kMini, kMiniRot };
enum class Sparsity { kDense, kSparse };
enum class TextureMode { kUniform, kVaried };
enum class Action { kForward = 0, kTurnLeft = 1, kTurnRight = 2, kNoop = 3 };
enum class Heading { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

Scenario scenario_from_string(const std::string& s);
Sparsity sparsity_from_string(const std::string& s);
TextureMode texture_from_string(const std::string& s);
std::string to_string(Scenario s);
std::string to_string(Sparsity s);
std::string to_string(TextureMode t);

struct Rgb {
    double r = 0, g = 0, b = 0;
};

// Room-graph world: ASCII grid where '.' is floor and any other declared
// character is a wall carrying that texture id. Loaded from bundled maps
// or external files; validated on load (rectangular, closed border, goal
// reachable from every start, exactly 17 dense starts).
struct MazeSpec {
    std::string name;
    int width = 0;
    int height = 0;
    std::vector<std::string> grid;
    int room_count = 0;
    std::map<char, Rgb> palette;
    int goal_x = 0, goal_y = 0;
    int sparse_x = 0, sparse_y = 0;
    Heading sparse_heading = Heading::kEast;
    std::vector<std::pair<int, int>> dense_starts;
    TextureMode texture_mode = TextureMode::kVaried;

    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    bool is_wall(int x, int y) const { return grid[y][x] != '.'; }
    bool is_goal(int x, int y) const { return x == goal_x && y == goal_y; }
};

struct EnvState {
    int x = 0, y = 0;
    Heading heading = Heading::kNorth;
    int steps_taken = 0;
    bool done = false;
    Rng rng{0};
};

struct StepResult {
    Tensor obs;
    double reward = 0.0;
    bool done = false;
};

MazeSpec parse_map_text(const std::string& text, TextureMode mode);
MazeSpec load_map_file(const std::string& path, TextureMode mode);

// BFS over floor cells from the goal; -1 marks unreachable cells.
std::vector<int> bfs_from_goal(const MazeSpec& spec);

// Column raycast over a 60-degree field of view, one ray per pixel
// column; walls shaded by texture color times 1/(1+distance). The goal
// cell renders as a pillar: marker green in varied mode, plain wall
// color in uniform mode.
Tensor render_frame(const MazeSpec& spec, const EnvState& st);

class MazeEnv {
  public:
    MazeEnv(MazeSpec spec, Sparsity sparsity, std::uint64_t seed, int frameskip = 1);

    // Dense: start cell (and heading) sampled from the 17 bundled starts;
    // sparse: the fixed far start. Returns the first frame.
    Tensor reset();

    // Applies one action (repeated `frameskip` times): forward moves one
    // cell unless blocked, turns rotate 90 degrees, noop does nothing.
    // +1 and done on entering the goal; done with 0 at the 2100-step cap.
    StepResult step(Action a);

    Tensor render() const { return render_frame(spec_, st_); }

    const MazeSpec& spec() const { return spec_; }
    const EnvState& state() const { return st_; }
    Sparsity sparsity() const { return sparsity_; }

  private:
    MazeSpec spec_;
    Sparsity sparsity_;
    EnvState st_;
    int frameskip_;
    bool needs_reset_ = true;
};

MazeEnv load_scenario(Scenario scenario, Sparsity sparsity, TextureMode texture,
                      std::uint64_t seed, int frameskip = 1);

// Binary PPM (P6) export of a [3, 42, 42] frame with values in [0, 1].
void write_ppm(const std::string& path, const Tensor& frame);

namespace detail {
std::string bundled_map_text(const std::string& name);
}

}  // namespace capsnav
