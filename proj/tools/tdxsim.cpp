// tdxsim: runs scenario files against the simulator and serves the PCS over
// the line protocol.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tdxsim/scenario.hpp"

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("TDXSIM_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 0);
  if (*end != '\0') {
    std::cerr << "tdxsim: ignoring malformed TDXSIM_SEED '" << s << "'\n";
    return std::nullopt;
  }
  return v;
}

int run_scenario(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out_path,
                 bool verbose, bool keep_going) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << path << ": cannot open\n";
    return tdxsim::kExitParse;
  }
  std::stringstream text;
  text << in.rdbuf();
  auto parsed = tdxsim::parse_scenario(text.str());
  if (const auto* err = std::get_if<tdxsim::ParseError>(&parsed)) {
    std::cerr << path << ":" << err->line << ": " << err->message << "\n";
    return tdxsim::kExitParse;
  }

  tdxsim::RunOptions opts;
  opts.seed = seed;
  opts.fallback_seed = env_seed();
  opts.verbose = verbose;
  opts.keep_going = keep_going;
  opts.base_dir = std::filesystem::path(path).parent_path();
  tdxsim::Runner runner(opts);
  const int code = runner.run(std::get<tdxsim::Scenario>(parsed));

  if (out_path.empty()) {
    std::cout << runner.trace().text();
  } else {
    std::ofstream out(out_path, std::ios::binary);
    out << runner.trace().text();
    if (!out) {
      std::cerr << out_path << ": write failed\n";
      return tdxsim::kExitExec;
    }
  }
  return code;
}

// One request per line on stdin, one response per line on stdout.
int pcs_serve(std::uint64_t seed) {
  tdxsim::Pcs pcs(seed);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    auto msg = tdxsim::decode_line(line);
    if (!msg) {
      const std::string e = "malformed";
      std::cout << tdxsim::encode_line("error", tdxsim::Bytes(e.begin(), e.end())) << std::endl;
      continue;
    }
    if (msg->first == "quit") break;
    auto [kind, payload] = tdxsim::pcs_handle(pcs, msg->first, msg->second);
    std::cout << tdxsim::encode_line(kind, payload) << std::endl;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TDX platform simulator"};
  app.require_subcommand(1);

  std::string scenario_path, out_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false, keep_going = false;
  auto* run = app.add_subcommand("run", "Execute a scenario file and write its trace");
  run->add_option("scenario", scenario_path, "Scenario file")->required();
  run->add_option("--seed", seed, "RNG seed (default: scenario, then TDXSIM_SEED, then 1)");
  run->add_option("--out", out_path, "Write the trace here instead of stdout");
  run->add_flag("--trace", verbose, "Include hex dumps of protocol messages");
  run->add_flag("--keep-going", keep_going, "Continue after a failing command");

  std::optional<std::uint64_t> pcs_seed;
  auto* serve = app.add_subcommand("pcs-serve", "Serve PCS requests over stdin/stdout");
  serve->add_option("--seed", pcs_seed, "PCS root key seed");

  auto* verbs = app.add_subcommand("verbs", "List scenario verbs");

  CLI11_PARSE(app, argc, argv);

  if (*run) return run_scenario(scenario_path, seed, out_path, verbose, keep_going);
  if (*serve) return pcs_serve(pcs_seed.value_or(env_seed().value_or(1)));
  if (*verbs) {
    for (const auto& v : tdxsim::scenario_verbs()) std::cout << v << "\n";
    return 0;
  }
  return 0;
}
