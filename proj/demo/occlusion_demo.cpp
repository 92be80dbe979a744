// Runs the occlusion template once per mode and prints what the ego recovers
// of the hidden vehicle and what it cost on the air.

#include <cstdio>

#include "slimcomm/slimcomm.hpp"

int main() {
  using namespace slimcomm;
  Settings s;
  s.scene.layout = "occlusion";
  s.scene.agents = 2;
  s.scene.frames = 1;

  const Scene scene = generate_scene(s.scene, 100);
  std::printf("hidden vehicle visible to ego: %s, to collaborator: %s\n",
              vehicle_hidden_from(scene, 0, 2) ? "no" : "yes", vehicle_hidden_from(scene, 1, 2) ? "no" : "yes");

  std::printf("%-9s %10s %10s %12s %8s\n", "mode", "visible", "occluded", "payload_B", "cv_log2");
  for (Mode m : kAllModes) {
    const RunResult r = run_scenario(s, m, 100);
    const FrameResult& f = r.frames.front();
    std::printf("%-9s %10.3f %10.3f %12llu %8.2f\n", to_string(m).c_str(), f.cov.visible, f.cov.occluded,
                static_cast<unsigned long long>(f.ledger.payload_bytes), f.ledger.cv_log2);
  }
  return 0;
}
