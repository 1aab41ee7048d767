// Runs one episode in a generated world and prints its metrics.
//
//   single_episode [seed] [style] [policy]
//   style: corridor | rooms | open | mixed      policy: fixed | global_linear | conditional_linear ...

#include <cstdlib>
#include <iostream>
#include <string>

#include "dgnav/agent.hpp"
#include "dgnav/harness.hpp"

int main(int argc, char** argv) {
  using namespace dgnav;
  try {
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
    const WorldStyle style = parse_world_style(argc > 2 ? argv[2] : "mixed");
    ThresholdPolicy policy;
    policy.kind = parse_policy_kind(argc > 3 ? argv[3] : "conditional_linear");
    // rough values from a mixed-style calibration
    policy.sigma_med = 1.85;
    policy.sigma_max = 2.8;
    policy.alpha = 1.3;
    policy.beta = 0.4;
    policy.validate();

    const OccupancyWorld world = generate_world(seed, style, 12.0);
    const Instruction instruction = encode_instruction(world, route_landmarks(world));
    const PlannerModel model = PlannerModel::init({}, seed);
    EpisodeLimits limits;
    limits.max_steps = 60;

    const EpisodeResult r = run_episode(world, instruction, policy, model, limits);
    std::cout << "world " << to_string(style) << " seed " << seed << "\n"
              << "  cycles " << r.cycles << "  actions " << r.steps << "  nodes " << r.node_count << "\n"
              << "  success " << r.success << "  oracle_success " << r.oracle_success << "  spl " << r.spl << "\n"
              << "  tl " << r.tl << "  ne " << r.ne << "  ndtw " << r.ndtw << "  sdtw " << r.sdtw << "\n";
    double g = 0.0;
    for (double x : r.gamma_trace) g += x;
    std::cout << "  mean gamma " << g / static_cast<double>(r.gamma_trace.size()) << "\n";
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return e.is_user_error() ? 2 : 1;
  }
  return 0;
}
