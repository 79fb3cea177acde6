#pragma once

// Scenario files: one command per line, `verb key=value ...`, '#' comments.
// The whole file is validated before anything runs.

#include <filesystem>
#include <variant>

#include "tdxsim/attest.hpp"

namespace tdxsim {

struct Command {
  std::size_t line = 0;
  std::string verb;
  std::map<std::string, std::string> args;

  bool has(const std::string& k) const { return args.contains(k); }
};

struct Scenario {
  std::vector<Command> commands;
};

struct ParseError {
  std::size_t line = 0;
  std::string message;
};

std::variant<Scenario, ParseError> parse_scenario(std::string_view text);
const std::vector<std::string>& scenario_verbs();
bool is_inspect_verb(std::string_view verb);

enum ExitCode : int { kExitOk = 0, kExitParse = 2, kExitExec = 3, kExitVerify = 4 };

struct RunOptions {
  std::optional<std::uint64_t> seed;           // --seed; beats everything
  std::optional<std::uint64_t> fallback_seed;  // TDXSIM_SEED; used when the scenario names none
  bool verbose = false;                        // hex dumps of protocol messages
  bool keep_going = false;
  std::filesystem::path base_dir;  // policy files resolve against this
};

// Executes a parsed scenario against one platform instance.
class Runner {
 public:
  explicit Runner(RunOptions opts);
  ~Runner();
  Runner(const Runner&) = delete;
  Runner& operator=(const Runner&) = delete;

  // Returns the exit code: 0, 3 (execution failure) or 4 (verification failure).
  int run(const Scenario& s);

  const Trace& trace() const { return trace_; }
  Platform* platform() { return platform_.get(); }
  std::uint64_t seed() const { return seed_; }
  std::optional<std::uint64_t> tdr_of(const std::string& name) const;

 private:
  struct TdEntry {
    std::uint64_t tdr = 0;
    std::uint32_t hkid = 0;
    unsigned vcpus = 1;
    std::map<std::uint64_t, std::uint64_t> gpa_to_hpa;
    std::vector<GuestOp> pending;
    std::optional<TdReport> report;
  };
  struct Outcome {
    int code = kExitOk;
    Status status = Status::Success;
    std::string detail;
  };

  Outcome execute(const Command& c);
  Outcome exec_failure(Status s, std::string detail = {}) { return {kExitExec, s, std::move(detail)}; }
  Outcome verify_failure(std::string detail) { return {kExitVerify, Status::Success, std::move(detail)}; }
  Outcome expect_verdict(const Command& c, const Verdict& v);

  void ensure_platform(const Command* platform_cmd);
  Result<TdEntry*> td_arg(const Command& c);
  std::uint64_t alloc_page();
  Status ensure_attestation();
  AgentTd agent_for(const TdEntry& td) const;
  Outcome inspect(const Command& c);
  void emit(std::string_view event, std::vector<TraceField> f) { trace_.emit("harness", event, std::move(f)); }

  RunOptions opts_;
  Trace trace_;
  std::uint64_t seed_ = 1;
  std::unique_ptr<Platform> platform_;
  bool initialized_ = false;
  std::uint64_t next_page_ = 0;
  std::map<std::string, TdEntry> tds_;
  std::unique_ptr<crypto::Rng> rng_;
  std::unique_ptr<Pcs> pcs_;
  std::unique_ptr<Pccs> pccs_;
  std::unique_ptr<QuotingEnclave> qe_;
  std::optional<ReferencePolicy> policy_;
  std::optional<Quote> quote_;
  Bytes quote_nonce_;
};

// Deterministic page content used by td-add-page when no data is given.
Bytes pattern_page(std::uint8_t seed);

}  // namespace tdxsim
