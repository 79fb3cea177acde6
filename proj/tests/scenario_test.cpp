#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tdxsim/scenario.hpp"

using namespace tdxsim;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarioDir = TDXSIM_SCENARIO_DIR;
const std::string kCli = TDXSIM_CLI;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Scenario parse_ok(std::string_view text) {
  auto r = parse_scenario(text);
  if (auto* e = std::get_if<ParseError>(&r)) ADD_FAILURE() << "line " << e->line << ": " << e->message;
  return std::get<Scenario>(r);
}

ParseError parse_err(std::string_view text) {
  auto r = parse_scenario(text);
  EXPECT_TRUE(std::holds_alternative<ParseError>(r));
  return std::holds_alternative<ParseError>(r) ? std::get<ParseError>(r) : ParseError{};
}

struct RunResult {
  int code = 0;
  std::string trace;
};

RunResult run_text(std::string_view text, RunOptions opts = {}) {
  if (opts.base_dir.empty()) opts.base_dir = kScenarioDir;
  Runner r(opts);
  const int code = r.run(parse_ok(text));
  return {code, r.trace().text()};
}

RunResult run_file(const fs::path& p) {
  RunOptions o;
  o.base_dir = p.parent_path();
  return run_text(slurp(p), o);
}

std::string last_line(const std::string& trace) {
  std::string s = trace;
  while (!s.empty() && s.back() == '\n') s.pop_back();
  const auto nl = s.rfind('\n');
  return nl == std::string::npos ? s : s.substr(nl + 1);
}

// Runs the CLI through the shell; returns exit status and stdout.
RunResult cli(const std::string& args, const std::string& env = "env -u TDXSIM_SEED") {
  const std::string cmd = env + " " + kCli + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  RunResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.trace.append(buf, n);
  const int st = pclose(pipe);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

constexpr std::string_view kBuild = R"(platform seed=4
install
init
td-create name=a hkid=5
td-add-page td=a gpa=0x0
td-add-page td=a gpa=0x1000
td-finalize td=a
)";

std::vector<fs::path> golden_scenarios() {
  std::vector<fs::path> v;
  for (const auto& e : fs::directory_iterator(kScenarioDir))
    if (e.path().extension() == ".scn") v.push_back(e.path());
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

// ---- parsing

TEST(ScenarioParse, EmptyAndComments) {
  EXPECT_TRUE(parse_ok("").commands.empty());
  EXPECT_TRUE(parse_ok("# nothing\n\n   \n").commands.empty());
  auto s = parse_ok("install svn=2  # trailing comment\ninit hkid=0x4\n");
  ASSERT_EQ(s.commands.size(), 2u);
  EXPECT_EQ(s.commands[0].line, 1u);
  EXPECT_EQ(s.commands[0].args.at("svn"), "2");
  EXPECT_EQ(s.commands[1].args.at("hkid"), "0x4");
}

TEST(ScenarioParse, UnknownVerbReportsLine) {
  auto e = parse_err("install\ninit\nlaunch-missiles now=1\n");
  EXPECT_EQ(e.line, 3u);
  EXPECT_NE(e.message.find("launch-missiles"), std::string::npos);
}

TEST(ScenarioParse, RejectsBadArguments) {
  EXPECT_EQ(parse_err("td-create\n").line, 1u);                          // missing name
  EXPECT_EQ(parse_err("install\ntd-create name=a colour=red\n").line, 2u);  // unknown key
  EXPECT_EQ(parse_err("init hkid=four\n").line, 1u);
  EXPECT_EQ(parse_err("quote td=a nonce=xyz\n").line, 1u);
  EXPECT_EQ(parse_err("revoke which=root\n").line, 1u);
  EXPECT_EQ(parse_err("install svn=1 svn=2\n").line, 1u);
  EXPECT_EQ(parse_err("install bare\n").line, 1u);
  EXPECT_EQ(parse_err("td-create name=a/b\n").line, 1u);
  EXPECT_EQ(parse_err("install\nplatform seed=1\n").line, 2u);
  EXPECT_EQ(parse_err("host-write data=00\n").line, 1u);
  EXPECT_EQ(parse_err("host-write data=00 pa=0 td=a gpa=0\n").line, 1u);
}

TEST(ScenarioParse, EveryVerbKnown) {
  const auto& verbs = scenario_verbs();
  for (const char* v : {"pcs-register", "qe-init", "quote", "verify", "ra-flow", "encrypted-boot-demo", "pamt-walk",
                        "keyhole-stats", "td-state", "module-state"})
    EXPECT_NE(std::find(verbs.begin(), verbs.end(), v), verbs.end()) << v;
}

TEST(ScenarioParse, ValidationPrecedesExecution) {
  // The bad line comes after commands that would otherwise run.
  const fs::path tmp = fs::temp_directory_path() / "tdxsim_parse_err.scn";
  std::ofstream(tmp) << "install\ninit\nbogus-verb\n";
  auto out = cli("run " + tmp.string());
  EXPECT_EQ(out.code, kExitParse);
  EXPECT_TRUE(out.trace.empty());
  fs::remove(tmp);
}

// ---- runner

TEST(ScenarioRun, EmptyScenarioEmptyTrace) {
  auto r = run_text("");
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_TRUE(r.trace.empty());
}

TEST(ScenarioRun, ExecutionFailureExitsThree) {
  auto r = run_text("install\ninit\ntd-finalize td=ghost\ninstall\n");
  EXPECT_EQ(r.code, kExitExec);
  EXPECT_NE(last_line(r.trace).find("event=failure line=3 verb=td-finalize exit=3 status=TD_NOT_FOUND"),
            std::string::npos);
}

TEST(ScenarioRun, KeepGoingRunsRemainingCommands) {
  RunOptions o;
  o.keep_going = true;
  auto r = run_text("install\ninit\ntd-finalize td=ghost\nmodule-state\n", o);
  EXPECT_EQ(r.code, kExitExec);
  EXPECT_NE(last_line(r.trace).find("event=module-state"), std::string::npos);
}

TEST(ScenarioRun, VerificationFailureExitsFour) {
  std::string s(kBuild);
  s += "td-run td=a\npcs-register\nqe-init\nquote td=a nonce=01\npolicy from=a\nverify nonce=02\n";
  auto r = run_text(s);
  EXPECT_EQ(r.code, kExitVerify);
  auto tamper = run_text(std::string(kBuild) + "td-run td=a\ntd-report td=a\nreport-verify td=a tamper=9\n");
  EXPECT_EQ(tamper.code, kExitVerify);
}

TEST(ScenarioRun, QuoteBeforeRegistrationFails) {
  auto r = run_text(std::string(kBuild) + "td-run td=a\nquote td=a nonce=01\n");
  EXPECT_EQ(r.code, kExitExec);
  EXPECT_NE(r.trace.find("status=NOT_REGISTERED"), std::string::npos);
}

TEST(ScenarioInspect, BeforeInitIsNotInitialized) {
  for (const char* v : {"module-state", "pamt-walk pa=0x40000000", "keyhole-stats", "td-state td=a"}) {
    auto r = run_text(std::string("install\n") + v + "\n");
    EXPECT_EQ(r.code, kExitExec) << v;
    EXPECT_NE(r.trace.find("status=NOT_INITIALIZED"), std::string::npos) << v;
  }
}

TEST(ScenarioInspect, ReadOnly) {
  Runner r(RunOptions{});
  ASSERT_EQ(r.run(parse_ok(std::string(kBuild) + "td-run td=a\n")), kExitOk);
  const auto tdr = r.tdr_of("a");
  ASSERT_TRUE(tdr);
  const Digest48 before = r.platform()->state_digest();
  std::ostringstream inspect;
  inspect << "module-state\ntd-state td=a\nkeyhole-stats lp=0\nkeyhole-stats lp=1\n";
  for (std::uint64_t pa : {*tdr, *tdr + kPage4K, std::uint64_t{0x40000000}, std::uint64_t{0x7ffff000}})
    inspect << "pamt-walk pa=" << pa << "\n";
  ASSERT_EQ(r.run(parse_ok(inspect.str())), kExitOk);
  EXPECT_EQ(r.platform()->state_digest(), before);
}

TEST(ScenarioInspect, PamtWalkMatchesPamt) {
  Runner r(RunOptions{});
  ASSERT_EQ(r.run(parse_ok(kBuild)), kExitOk);
  const std::uint64_t tdr = *r.tdr_of("a");
  for (std::uint64_t pa : {tdr, tdr + kPage4K, tdr + 20 * kPage4K, std::uint64_t{0x50000000}}) {
    const std::size_t before = r.trace().lines().size();
    ASSERT_EQ(r.run(parse_ok("pamt-walk pa=" + std::to_string(pa) + "\n")), kExitOk);
    const std::string& line = r.trace().lines().back();
    ASSERT_GT(r.trace().lines().size(), before);
    auto w = r.platform()->memory().pamt().walk(pa);
    ASSERT_TRUE(w);
    EXPECT_NE(line.find("type=" + std::string(to_string(w->type)) + " "), std::string::npos) << line;
    EXPECT_NE(line.find("size=" + std::string(to_string(w->size))), std::string::npos) << line;
    const std::string owner = w->owner == kNoOwner ? "-" : hex_u64(w->owner);
    EXPECT_NE(line.find("owner=" + owner), std::string::npos) << line;
  }
}

TEST(ScenarioInspect, FatalTdState) {
  auto r = run_file(kScenarioDir / "poison.scn");
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.trace.find("event=td-state td=v tdr=0x40100000 hkid=5 lifecycle=Fatal"), std::string::npos);
}

TEST(ScenarioSeed, Precedence) {
  const std::string s = "platform seed=21\ninstall\n";
  RunOptions o;
  {
    Runner r(o);
    ASSERT_EQ(r.run(parse_ok(s)), kExitOk);
    EXPECT_EQ(r.seed(), 21u);
  }
  o.fallback_seed = 33;
  {
    Runner r(o);
    ASSERT_EQ(r.run(parse_ok(s)), kExitOk);
    EXPECT_EQ(r.seed(), 21u);
    Runner r2(o);
    ASSERT_EQ(r2.run(parse_ok("install\n")), kExitOk);
    EXPECT_EQ(r2.seed(), 33u);
  }
  o.seed = 44;
  Runner r(o);
  ASSERT_EQ(r.run(parse_ok(s)), kExitOk);
  EXPECT_EQ(r.seed(), 44u);
}

TEST(ScenarioSeed, SeedChangesKeysNotStructure) {
  const std::string path = (kScenarioDir / "quote_verify.scn").string();
  auto a = cli("run " + path + " --seed 1");
  auto b = cli("run " + path + " --seed 2");
  EXPECT_EQ(a.code, kExitOk);
  EXPECT_EQ(b.code, kExitOk);
  EXPECT_NE(a.trace, b.trace);
  EXPECT_EQ(std::count(a.trace.begin(), a.trace.end(), '\n'), std::count(b.trace.begin(), b.trace.end(), '\n'));
  auto env = cli("run " + path, "env TDXSIM_SEED=2");
  EXPECT_EQ(env.trace, cli("run " + path).trace);  // the scenario names its own seed
}

// ---- golden traces

class Golden : public ::testing::TestWithParam<fs::path> {};

TEST_P(Golden, MatchesAndReproduces) {
  const fs::path scn = GetParam();
  const fs::path golden = fs::path(scn).replace_extension(".trace");
  ASSERT_TRUE(fs::exists(golden)) << golden;
  auto first = run_file(scn);
  auto second = run_file(scn);
  EXPECT_EQ(first.code, kExitOk);
  EXPECT_EQ(first.trace, second.trace);
  EXPECT_EQ(first.trace, slurp(golden));
}

INSTANTIATE_TEST_SUITE_P(Scenarios, Golden, ::testing::ValuesIn(golden_scenarios()),
                         [](const auto& info) { return info.param.stem().string(); });

TEST(GoldenContent, EncryptedBootEndsWithRelease) {
  EXPECT_NE(last_line(slurp(kScenarioDir / "encrypted_boot.trace")).find("key_released=true"), std::string::npos);
  EXPECT_NE(last_line(slurp(kScenarioDir / "encrypted_boot_denied.trace")).find("key_released=false"),
            std::string::npos);
}

// ---- CLI

TEST(Cli, RunWritesTraceToOutFile) {
  const fs::path out = fs::temp_directory_path() / "tdxsim_cli_out.trace";
  const fs::path scn = kScenarioDir / "td_lifecycle.scn";
  auto r = cli("run " + scn.string() + " --out " + out.string());
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(slurp(out), slurp(kScenarioDir / "td_lifecycle.trace"));
  fs::remove(out);
}

TEST(Cli, TraceFlagAddsMessageDumps) {
  const std::string scn = (kScenarioDir / "ra_flow.scn").string();
  auto plain = cli("run " + scn);
  auto verbose = cli("run " + scn + " --trace");
  EXPECT_EQ(plain.code, kExitOk);
  EXPECT_EQ(verbose.code, kExitOk);
  EXPECT_EQ(plain.trace.find("event=dump"), std::string::npos);
  EXPECT_NE(verbose.trace.find("event=dump"), std::string::npos);
}

TEST(Cli, KeepGoingAndExitCodes) {
  const fs::path tmp = fs::temp_directory_path() / "tdxsim_fail.scn";
  std::ofstream(tmp) << "install\ninit\ntd-finalize td=nope\nmodule-state\n";
  auto stop = cli("run " + tmp.string());
  EXPECT_EQ(stop.code, kExitExec);
  EXPECT_EQ(stop.trace.find("event=module-state"), std::string::npos);
  auto go = cli("run " + tmp.string() + " --keep-going");
  EXPECT_EQ(go.code, kExitExec);
  EXPECT_NE(go.trace.find("event=module-state"), std::string::npos);
  fs::remove(tmp);
}

TEST(Cli, PcsServeLineProtocol) {
  const std::string req = encode_line("root", {}) + "\\n" + encode_line("pck", Bytes(16, 0)) + "\\n" +
                          encode_line("collateral", {}) + "\\nbad line\\n";
  auto r = cli("pcs-serve --seed 7", "printf '" + req + "' |");
  EXPECT_EQ(r.code, 0);
  std::istringstream lines(r.trace);
  std::string l;
  std::vector<std::pair<std::string, Bytes>> replies;
  while (std::getline(lines, l)) {
    auto d = decode_line(l);
    ASSERT_TRUE(d) << l;
    replies.push_back(*d);
  }
  ASSERT_EQ(replies.size(), 4u);
  EXPECT_EQ(replies[0].first, "root-cert");
  auto root = Cert::parse(replies[0].second);
  ASSERT_TRUE(root);
  EXPECT_EQ(root->pubkey, Pcs(7).root_pub());
  EXPECT_EQ(replies[1].first, "error");
  EXPECT_EQ(replies[2].first, "collateral");
  EXPECT_TRUE(Collateral::parse(replies[2].second));
  EXPECT_EQ(replies[3].first, "error");
}
