#pragma once

// Named parameter sets for the experiments reproduced by the scenarios.

#include <optional>
#include <string>
#include <vector>

namespace fblab {

struct Preset {
  std::string name;
  std::string description;
  double omega1_hz = 27e3;
  double omega2_hz = 33e3;
  double gamma_hz = 0.0;
  double g_hz = 0.0;
  double delta_hz = 0.0;  // |delta|; runs use the positive sign
  double kd_pi = 0.0;
  std::string branch = "detuning";
  std::string occupation = "thermal";  // or "equal": n1 = n2 at the mean trap frequency
  std::vector<double> kd_grid_pi;      // distance scans only
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = {
      {"fig2a", "avoided crossing, detuning scanned through the trap-frequency difference", 27e3, 33e3, 570.0, 953.0,
       0.0, 0.0, "detuning", "thermal", {}},
      {"fig3a-top", "energy exchange after cooling particle 1, beamsplitter branch", 27e3, 33e3, 106.0, 724.0, 202.0,
       -0.029, "detuning", "thermal", {}},
      {"fig3a-bottom", "energy exchange on the two-mode squeezing branch", 27e3, 33e3, 147.0, 722.0, 318.0, 0.489, "sum",
       "thermal", {}},
      {"fig3b-top", "phase locking near kd = 0", 27e3, 33e3, 570.0, 806.0, 670.0, -0.07, "detuning", "thermal", {}},
      {"fig3b-bottom", "phase locking near kd = pi/2", 27e3, 33e3, 474.0, 357.0, 45.0, 0.51, "detuning", "thermal", {}},
      {"fig3c", "two-mode squashing at the fig3b-bottom point, equal baths", 27e3, 33e3, 474.0, 357.0, 45.0, 0.51,
       "detuning", "equal", {}},
      {"fig4", "complex eigenfrequency circle over eight distances", 27e3, 33e3, 466.0, 276.0, 0.0, 0.51, "detuning",
       "thermal", {1.19, 1.06, 0.94, 0.78, 0.65, 0.51, 0.39, 0.24}},
      {"squash-max", "resonant kd = pi/2 squashing point with g = 0.753 gamma", 27e3, 33e3, 474.0, 0.753 * 474.0, 0.0,
       0.5, "detuning", "equal", {}},
      {"no-interaction", "uncoupled control, g = 0", 27e3, 33e3, 474.0, 0.0, 0.0, 0.5, "detuning", "equal", {}},
  };
  return all;
}

inline std::optional<Preset> find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  return std::nullopt;
}

}  // namespace fblab
