#include <gtest/gtest.h>

#include "fixture.hpp"
#include "oracle/sha384_ref.hpp"

using namespace tdxsim;

namespace {

constexpr std::uint64_t kBufGpa = 0x2000;  // inside page 2 of the built TD
constexpr std::size_t kReportDataOff = 8 + 16 + 48 + 48;
constexpr std::size_t kHmacOff = kReportDataOff + 64;
constexpr std::size_t kTdInfoHashOff = 8 + 16 + 48;
constexpr std::size_t kRtmrOff = 232 + 50 + 8 + 48;

GuestOp write_op(std::uint64_t gpa, ByteSpan value) {
  GuestOp w = fx::op(GuestOp::Kind::Write, gpa);
  w.data.assign(value.begin(), value.end());
  return w;
}

GuestOp extend_op(std::uint32_t index, std::uint64_t gpa) {
  GuestOp e = fx::op(GuestOp::Kind::RtmrExtend, gpa);
  e.index = index;
  return e;
}

GuestOp report_op(ByteSpan reportdata) {
  GuestOp r = fx::op(GuestOp::Kind::Report);
  r.data.assign(reportdata.begin(), reportdata.end());
  return r;
}

Bytes value48(std::uint8_t seed) {
  Bytes v(48);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::uint8_t>(seed ^ (i * 13));
  return v;
}

class ReportTest : public ::testing::Test {
 protected:
  void SetUp() override {
    p = fx::ready();
    ASSERT_TRUE(p);
    auto t = fx::built_td(*p, alloc, 5, 3);
    ASSERT_TRUE(t);
    td = *t;
    ASSERT_TRUE(p->td_enter(0, td.tdr, 0));  // now Runnable
  }

  // Runs a script to completion, collecting any report exit.
  std::optional<TdReport> run(std::vector<GuestOp> script) {
    EXPECT_EQ(p->load_guest(td.tdr, 0, std::move(script)), Status::Success);
    std::optional<TdReport> rep;
    for (;;) {
      auto e = p->td_enter(0, td.tdr, 0);
      EXPECT_TRUE(e);
      if (!e) return rep;
      if (e->kind == TdExit::Kind::Report) rep = e->report;
      else if (e->kind == TdExit::Kind::Done) return rep;
      else {
        ADD_FAILURE() << "unexpected exit " << to_string(e->kind) << " " << to_string(e->status);
        return rep;
      }
    }
  }

  TdcallResult tdcall(GuestLeaf leaf, const GuestOp& op) {
    return p->tdcall(0, td.tdr, 0, static_cast<std::uint32_t>(leaf), op);
  }

  const std::array<Digest48, 4>& rtmr() const { return p->td(td.tdr)->rtmr; }

  std::unique_ptr<Platform> p;
  fx::PageAlloc alloc;
  fx::TdHandle td;
};

}  // namespace

TEST_F(ReportTest, RtmrSingleExtendFromZero) {
  const Bytes v = value48(1);
  run({write_op(kBufGpa, v), extend_op(2, kBufGpa)});
  Bytes in(48, 0);
  in.insert(in.end(), v.begin(), v.end());
  EXPECT_EQ(rtmr()[2], oracle::Sha384Ref::digest(in));
  EXPECT_EQ(rtmr()[0], Digest48{});
  EXPECT_EQ(rtmr()[3], Digest48{});
}

TEST_F(ReportTest, RtmrChainMatchesOracleReplay) {
  crypto::Rng rng(6);
  std::vector<GuestOp> script;
  std::array<Digest48, 4> want{};
  for (int step = 0; step < 5; ++step) {
    Bytes v(48);
    rng.fill(v);
    const std::uint32_t index = static_cast<std::uint32_t>(rng.next_u64() % 4);
    const std::uint64_t gpa = kBufGpa + static_cast<std::uint64_t>(step) * kLineSize;
    script.push_back(write_op(gpa, v));
    script.push_back(extend_op(index, gpa));
    Bytes in(want[index].begin(), want[index].end());
    in.insert(in.end(), v.begin(), v.end());
    want[index] = oracle::Sha384Ref::digest(in);
  }
  run(std::move(script));
  EXPECT_EQ(rtmr(), want);
}

TEST_F(ReportTest, RtmrOrderSensitive) {
  const Bytes v1 = value48(1), v2 = value48(2);
  run({write_op(kBufGpa, v1), write_op(kBufGpa + 64, v2), extend_op(0, kBufGpa), extend_op(0, kBufGpa + 64),
       extend_op(1, kBufGpa + 64), extend_op(1, kBufGpa)});
  EXPECT_NE(rtmr()[0], rtmr()[1]);
}

TEST_F(ReportTest, RtmrErrors) {
  EXPECT_EQ(tdcall(GuestLeaf::MrRtmrExtend, extend_op(4, kBufGpa)).status, Status::BadIndex);
  EXPECT_EQ(tdcall(GuestLeaf::MrRtmrExtend, extend_op(0, kBufGpa + 8)).status, Status::Misaligned);
  EXPECT_EQ(tdcall(GuestLeaf::MrRtmrExtend, extend_op(0, 0x400000)).status, Status::NotMapped);
  for (const auto& r : rtmr()) EXPECT_EQ(r, Digest48{});
}

TEST_F(ReportTest, ReportCopiesLiveState) {
  Bytes rd(64);
  for (std::size_t i = 0; i < rd.size(); ++i) rd[i] = static_cast<std::uint8_t>(i);
  auto rep = run({report_op(rd)});
  ASSERT_TRUE(rep);
  const TdState* s = p->td(td.tdr);
  EXPECT_EQ(rep->td.mrtd, s->mrtd);
  EXPECT_EQ(rep->td.rtmr, s->rtmr);
  EXPECT_EQ(rep->td.attributes, p->config().td_attributes);
  EXPECT_EQ(rep->tcb.module_svn, p->module_identity()->svn);
  EXPECT_EQ(rep->tcb.module_measurement, p->module_identity()->measurement);
  EXPECT_EQ(rep->mac.cpu_svn, p->config().cpu_svn);
  EXPECT_EQ(rep->mac.header, kReportHeaderTdx);
  EXPECT_TRUE(std::equal(rd.begin(), rd.end(), rep->mac.reportdata.begin()));
  EXPECT_TRUE(p->everifyreport2(*rep));
  EXPECT_EQ(rep->serialize().size(), TdReport::kSize);
}

TEST_F(ReportTest, ReportdataLength) {
  EXPECT_EQ(tdcall(GuestLeaf::MrReport, report_op(Bytes(63))).status, Status::BadLength);
  EXPECT_EQ(tdcall(GuestLeaf::MrReport, report_op(Bytes(65))).status, Status::BadLength);
  auto ok = tdcall(GuestLeaf::MrReport, report_op(Bytes(64)));
  EXPECT_EQ(ok.status, Status::Success);
  EXPECT_TRUE(ok.report);
}

TEST_F(ReportTest, ReportdataChangesOnlyReportdataAndHmac) {
  auto a = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 1))).report;
  auto b = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 2))).report;
  ASSERT_TRUE(a && b);
  const Bytes sa = a->serialize(), sb = b->serialize();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const bool allowed = i >= kReportDataOff && i < kHmacOff + 48;
    if (!allowed) EXPECT_EQ(sa[i], sb[i]) << "offset " << i;
  }
  EXPECT_FALSE(std::equal(sa.begin() + kHmacOff, sa.begin() + kHmacOff + 48, sb.begin() + kHmacOff));
}

TEST_F(ReportTest, ReportAfterExtendChangesMeasuredFields) {
  auto before = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 0))).report;
  run({write_op(kBufGpa, value48(9)), extend_op(1, kBufGpa)});
  auto after = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 0))).report;
  ASSERT_TRUE(before && after);
  const Bytes sa = before->serialize(), sb = after->serialize();
  const auto in = [](std::size_t i, std::size_t lo, std::size_t len) { return i >= lo && i < lo + len; };
  bool rtmr_changed = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] == sb[i]) continue;
    // RTMR[1] itself, plus what binds it: the TD_INFO hash and the HMAC.
    EXPECT_TRUE(in(i, kRtmrOff + 48, 48) || in(i, kTdInfoHashOff, 48) || in(i, kHmacOff, 48)) << i;
    rtmr_changed |= in(i, kRtmrOff + 48, 48);
  }
  EXPECT_TRUE(rtmr_changed);
}

TEST_F(ReportTest, SingleByteFuzzAlwaysDetected) {
  auto rep = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 0x5c))).report;
  ASSERT_TRUE(rep);
  ASSERT_TRUE(p->everifyreport2(*rep));
  const Bytes orig = rep->serialize();
  std::size_t mutants = 0;
  for (std::size_t pos = 0; pos < orig.size(); ++pos) {
    for (unsigned x = 1; x < 256; ++x) {
      Bytes m = orig;
      m[pos] ^= static_cast<std::uint8_t>(x);
      auto parsed = TdReport::parse(m);
      ASSERT_TRUE(parsed);
      ASSERT_FALSE(p->everifyreport2(*parsed)) << "pos " << pos << " xor " << x;
      ++mutants;
    }
  }
  EXPECT_EQ(mutants, TdReport::kSize * 255);
  EXPECT_TRUE(p->everifyreport2(*TdReport::parse(orig)));
}

TEST_F(ReportTest, OtherPlatformCannotVerify) {
  HarnessConfig c;
  c.rng_seed = 999;
  auto q = fx::ready(c);
  ASSERT_TRUE(q);
  auto rep = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 3))).report;
  ASSERT_TRUE(rep);
  EXPECT_TRUE(p->everifyreport2(*rep));
  EXPECT_FALSE(q->everifyreport2(*rep));
}

TEST_F(ReportTest, HashesBindComponents) {
  auto rep = tdcall(GuestLeaf::MrReport, report_op(Bytes(64, 4))).report;
  ASSERT_TRUE(rep);
  EXPECT_EQ(rep->mac.tee_tcb_info_hash, oracle::Sha384Ref::digest(rep->tcb.serialize()));
  EXPECT_EQ(rep->mac.td_info_hash, oracle::Sha384Ref::digest(rep->td.serialize()));
  auto body = parse_report_body(rep->body());
  ASSERT_TRUE(body);
  EXPECT_EQ(body->serialize().size(), TdReport::kSize);
  EXPECT_EQ(body->td.mrtd, rep->td.mrtd);
}

TEST_F(ReportTest, BufferPoisonIsTdFatal) {
  const std::uint64_t hpa = td.gpa_to_hpa[kBufGpa & ~(kPage4K - 1)];
  ASSERT_EQ(p->host_write(hpa, Bytes(64, 7)), Status::Success);
  EXPECT_EQ(tdcall(GuestLeaf::MrRtmrExtend, extend_op(0, kBufGpa)).status, Status::TdFatal);
  EXPECT_EQ(p->td(td.tdr)->lifecycle, Lifecycle::Fatal);
  EXPECT_EQ(p->phase(), Phase::Ready);
  EXPECT_EQ(p->td_enter(0, td.tdr, 0).status(), Status::TdFatal);
}
