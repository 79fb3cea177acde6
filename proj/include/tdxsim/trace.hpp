#pragma once

// Line-oriented event trace. Each event renders as
//   seq=<n> actor=<actor> event=<name> k=v ...
// and the sequence number is per-trace, so identical inputs give identical
// bytes.

#include <iosfwd>
#include <string>
#include <vector>

#include "tdxsim/common.hpp"

namespace tdxsim {

struct TraceField {
  std::string key;
  std::string value;
};

class Trace {
 public:
  Trace() = default;
  // Events are mirrored to out as they happen when a stream is attached.
  explicit Trace(std::ostream* out) : out_(out) {}

  void emit(std::string_view actor, std::string_view event, std::vector<TraceField> fields = {});
  // Hex payload dumps are only recorded when verbose is on.
  void dump(std::string_view actor, std::string_view what, ByteSpan payload);

  void set_verbose(bool v) { verbose_ = v; }
  bool verbose() const { return verbose_; }
  const std::vector<std::string>& lines() const { return lines_; }
  std::string text() const;
  std::uint64_t next_seq() const { return seq_; }

 private:
  std::ostream* out_ = nullptr;
  bool verbose_ = false;
  std::uint64_t seq_ = 0;
  std::vector<std::string> lines_;
};

std::string hex_u64(std::uint64_t v);

}  // namespace tdxsim
