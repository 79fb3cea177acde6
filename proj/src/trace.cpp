#include "tdxsim/trace.hpp"

#include <ostream>
#include <sstream>

namespace tdxsim {

void Trace::emit(std::string_view actor, std::string_view event, std::vector<TraceField> fields) {
  std::ostringstream line;
  line << "seq=" << seq_++ << " actor=" << actor << " event=" << event;
  for (const auto& f : fields) line << ' ' << f.key << '=' << f.value;
  lines_.push_back(line.str());
  if (out_ != nullptr) *out_ << lines_.back() << '\n';
}

void Trace::dump(std::string_view actor, std::string_view what, ByteSpan payload) {
  if (!verbose_) return;
  emit(actor, "dump", {{"what", std::string(what)}, {"len", std::to_string(payload.size())}, {"hex", to_hex(payload)}});
}

std::string Trace::text() const {
  std::string s;
  for (const auto& l : lines_) {
    s += l;
    s += '\n';
  }
  return s;
}

std::string hex_u64(std::uint64_t v) {
  std::ostringstream o;
  o << "0x" << std::hex << v;
  return o.str();
}

}  // namespace tdxsim
