#pragma once

// Four-level GPA -> HPA translation tree. The same structure backs the
// module-owned Secure EPT and the hypervisor-owned shared EPT; the GPA's
// shared bit selects which one a guest access walks.

#include <functional>
#include <memory>

#include "tdxsim/common.hpp"

namespace tdxsim {

inline constexpr unsigned kGpaWidth = 48;
inline constexpr std::uint64_t kGpaSharedBit = std::uint64_t{1} << (kGpaWidth - 1);

constexpr bool gpa_is_shared(std::uint64_t gpa) { return (gpa & kGpaSharedBit) != 0; }

struct EptLeaf {
  std::uint64_t gpa_base = 0;
  std::uint64_t hpa = 0;
  PageSize size = PageSize::k4K;
  bool pending = false;
};

struct Translation {
  EptLeaf leaf;
  std::uint64_t hpa = 0;  // leaf.hpa plus the offset of the GPA inside the leaf
};

class EptTree {
 public:
  EptTree();
  ~EptTree();
  EptTree(EptTree&&) noexcept;
  EptTree& operator=(EptTree&&) noexcept;

  Status map(std::uint64_t gpa, std::uint64_t hpa, PageSize size, bool pending = false);
  Status unmap(std::uint64_t gpa);
  Result<Translation> walk(std::uint64_t gpa) const;
  Status set_pending(std::uint64_t gpa, bool pending);
  void for_each_leaf(const std::function<void(const EptLeaf&)>& fn) const;
  std::size_t leaf_count() const { return leaves_; }
  void clear();

 private:
  struct Node;
  std::unique_ptr<Node> root_;
  std::size_t leaves_ = 0;
};

}  // namespace tdxsim
