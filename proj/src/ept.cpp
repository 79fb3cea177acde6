#include "tdxsim/ept.hpp"

namespace tdxsim {
namespace {

constexpr unsigned level_shift(int level) { return 12 + 9 * (level - 1); }
constexpr std::size_t index_at(std::uint64_t gpa, int level) { return (gpa >> level_shift(level)) & 511; }
constexpr int leaf_level(PageSize s) { return s == PageSize::k4K ? 1 : s == PageSize::k2M ? 2 : 3; }

}  // namespace

struct EptTree::Node {
  struct Slot {
    std::unique_ptr<Node> child;
    std::optional<EptLeaf> leaf;
  };
  std::array<Slot, 512> slots;
};

EptTree::EptTree() : root_(std::make_unique<Node>()) {}
EptTree::~EptTree() = default;
EptTree::EptTree(EptTree&&) noexcept = default;
EptTree& EptTree::operator=(EptTree&&) noexcept = default;

Status EptTree::map(std::uint64_t gpa, std::uint64_t hpa, PageSize size, bool pending) {
  if (gpa >> kGpaWidth) return Status::BadParams;
  if (gpa % page_bytes(size) != 0 || hpa % page_bytes(size) != 0) return Status::Misaligned;
  const int target = leaf_level(size);
  Node* node = root_.get();
  for (int level = 4; level > target; --level) {
    auto& slot = node->slots[index_at(gpa, level)];
    if (slot.leaf) return Status::AlreadyMapped;
    if (!slot.child) slot.child = std::make_unique<Node>();
    node = slot.child.get();
  }
  auto& slot = node->slots[index_at(gpa, target)];
  if (slot.leaf || slot.child) return Status::AlreadyMapped;
  slot.leaf = EptLeaf{gpa, hpa, size, pending};
  ++leaves_;
  return Status::Success;
}

Result<Translation> EptTree::walk(std::uint64_t gpa) const {
  const Node* node = root_.get();
  for (int level = 4; level >= 1; --level) {
    const auto& slot = node->slots[index_at(gpa, level)];
    if (slot.leaf) {
      const std::uint64_t offset = gpa & (page_bytes(slot.leaf->size) - 1);
      return Translation{*slot.leaf, slot.leaf->hpa + offset};
    }
    if (!slot.child) return Status::NotMapped;
    node = slot.child.get();
  }
  return Status::NotMapped;
}

Status EptTree::unmap(std::uint64_t gpa) {
  Node* node = root_.get();
  for (int level = 4; level >= 1; --level) {
    auto& slot = node->slots[index_at(gpa, level)];
    if (slot.leaf) {
      slot.leaf.reset();
      --leaves_;
      return Status::Success;
    }
    if (!slot.child) return Status::NotMapped;
    node = slot.child.get();
  }
  return Status::NotMapped;
}

Status EptTree::set_pending(std::uint64_t gpa, bool pending) {
  Node* node = root_.get();
  for (int level = 4; level >= 1; --level) {
    auto& slot = node->slots[index_at(gpa, level)];
    if (slot.leaf) {
      slot.leaf->pending = pending;
      return Status::Success;
    }
    if (!slot.child) return Status::NotMapped;
    node = slot.child.get();
  }
  return Status::NotMapped;
}

void EptTree::for_each_leaf(const std::function<void(const EptLeaf&)>& fn) const {
  auto visit = [&](auto&& self, const Node& node) -> void {
    for (const auto& slot : node.slots) {
      if (slot.leaf) fn(*slot.leaf);
      if (slot.child) self(self, *slot.child);
    }
  };
  visit(visit, *root_);
}

void EptTree::clear() {
  root_ = std::make_unique<Node>();
  leaves_ = 0;
}

}  // namespace tdxsim
