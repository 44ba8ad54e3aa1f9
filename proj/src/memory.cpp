#include "cleanstack/vm.hpp"

#include "cleanstack/transform.hpp"

#include <algorithm>

namespace cleanstack {

std::string_view trap_name(TrapKind k) {
  switch (k) {
  case TrapKind::GuardPageFault:
    return "GuardPageFault";
  case TrapKind::CanaryMismatch:
    return "CanaryMismatch";
  case TrapKind::InvalidAccess:
    return "InvalidAccess";
  case TrapKind::DivByZero:
    return "DivByZero";
  }
  return "?";
}

std::string_view status_name(RunStatus s) {
  switch (s) {
  case RunStatus::Exited:
    return "exited";
  case RunStatus::Trapped:
    return "trapped";
  case RunStatus::StepLimit:
    return "step_limit";
  }
  return "?";
}

std::string_view region_name(RegionKind k) {
  switch (k) {
  case RegionKind::Globals:
    return "globals";
  case RegionKind::CleanStack:
    return "clean_stack";
  case RegionKind::UncleanStack:
    return "unclean_stack";
  case RegionKind::Guard:
    return "guard";
  }
  return "?";
}

int RunOutcome::vm_exit_code() const {
  switch (status) {
  case RunStatus::Exited:
    return 0;
  case RunStatus::Trapped:
    return 2;
  case RunStatus::StepLimit:
    return 3;
  }
  return 2;
}

void VmConfig::validate() const {
  auto page_multiple = [](std::int64_t v) { return v > 0 && v % kPageSize == 0; };
  if (!page_multiple(clean_stack_size) || !page_multiple(unclean_stack_size) ||
      !page_multiple(guard_page_size))
    throw Error("stack and guard sizes must be positive multiples of " +
                std::to_string(kPageSize));
  if (static_cast<std::uint64_t>(clean_stack_size) + 2 * guard_page_size > kThreadStride / 2 ||
      static_cast<std::uint64_t>(unclean_stack_size) + 2 * guard_page_size > kThreadStride / 2)
    throw Error("stack size too large for the address-space layout");
  if (startup_reserve < 0 || startup_reserve % 16 || startup_reserve >= clean_stack_size)
    throw Error("startup reserve must be a multiple of 16 inside the clean stack");
  if (max_threads == 0 || max_threads > 1024)
    throw Error("max_threads must be in [1, 1024]");
}

void Memory::map(const Region &r) {
  if (r.size == 0)
    throw Error("empty region");
  auto it = regions_.lower_bound(r.base);
  if (it != regions_.end() && it->second.base < r.end())
    throw Error("region overlaps an existing mapping");
  if (it != regions_.begin() && std::prev(it)->second.end() > r.base)
    throw Error("region overlaps an existing mapping");
  regions_[r.base] = r;
}

void Memory::unmap(std::uint64_t base) {
  auto it = regions_.find(base);
  if (it == regions_.end())
    return;
  const Region r = it->second;
  regions_.erase(it);
  if (r.kind == RegionKind::Guard)
    return;
  for (std::uint64_t p = r.base / 4096; p <= (r.end() - 1) / 4096; ++p)
    pages_.erase(p);
  cached_no_ = ~0ULL;
  cached_ = nullptr;
}

const Region *Memory::region_of(std::uint64_t addr) const {
  auto it = regions_.upper_bound(addr);
  if (it == regions_.begin())
    return nullptr;
  --it;
  return it->second.contains(addr) ? &it->second : nullptr;
}

std::optional<Fault> Memory::check(std::uint64_t addr, std::uint64_t len) const {
  if (len == 0)
    return std::nullopt;
  const std::uint64_t last = addr + len - 1;
  if (last < addr) // wraps around the address space
    return Fault{TrapKind::InvalidAccess, addr};
  if (const Region *r = region_of(addr); r && r->kind != RegionKind::Guard && last < r->end())
    return std::nullopt;

  // Slow path: walk the regions overlapping the range.
  std::optional<std::uint64_t> first_guard, first_unmapped;
  std::uint64_t cur = addr;
  auto it = regions_.upper_bound(addr);
  if (it != regions_.begin() && std::prev(it)->second.end() > addr)
    --it;
  while (cur <= last) {
    if (it == regions_.end() || it->second.base > cur) {
      if (!first_unmapped)
        first_unmapped = cur;
      if (it == regions_.end())
        break;
      cur = it->second.base;
      if (cur > last)
        break;
    }
    const Region &r = it->second;
    if (r.kind == RegionKind::Guard && !first_guard)
      first_guard = cur;
    if (r.end() - 1 >= last)
      break;
    cur = r.end();
    ++it;
  }
  if (first_guard)
    return Fault{TrapKind::GuardPageFault, *first_guard};
  if (first_unmapped)
    return Fault{TrapKind::InvalidAccess, *first_unmapped};
  return std::nullopt;
}

Memory::Page *Memory::page(std::uint64_t a, bool create) const {
  const std::uint64_t no = a / 4096;
  if (no == cached_no_)
    return cached_;
  auto it = pages_.find(no);
  if (it == pages_.end()) {
    if (!create)
      return nullptr;
    auto &self = const_cast<Memory &>(*this);
    it = self.pages_.emplace(no, std::make_unique<Page>()).first;
  }
  cached_no_ = no;
  cached_ = it->second.get();
  return cached_;
}

std::uint8_t Memory::read_byte(std::uint64_t a) const {
  const Page *p = page(a, false);
  return p ? p->data[a % 4096] : 0;
}

bool Memory::taint_of(std::uint64_t a) const {
  const Page *p = page(a, false);
  return p && p->taint[a % 4096];
}

void Memory::write_byte(std::uint64_t a, std::uint8_t v, bool taint) {
  Page *p = page(a, true);
  p->data[a % 4096] = v;
  p->taint[a % 4096] = taint ? 1 : 0;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> Memory::tainted_ranges() const {
  std::vector<std::uint64_t> nos;
  nos.reserve(pages_.size());
  for (const auto &[no, _] : pages_)
    nos.push_back(no);
  std::sort(nos.begin(), nos.end());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  for (std::uint64_t no : nos) {
    const Page &p = *pages_.at(no);
    for (std::uint64_t i = 0; i < 4096; ++i) {
      if (!p.taint[i])
        continue;
      std::uint64_t a = no * 4096 + i;
      if (!out.empty() && out.back().second == a)
        out.back().second = a + 1;
      else
        out.emplace_back(a, a + 1);
    }
  }
  return out;
}

ThreadRegions thread_regions(int tid, const VmConfig &c) {
  const auto g = static_cast<std::uint64_t>(c.guard_page_size);
  ThreadRegions r;
  const std::uint64_t ctop = kCleanTop - static_cast<std::uint64_t>(tid) * kThreadStride;
  const auto csize = static_cast<std::uint64_t>(c.clean_stack_size);
  r.clean = {RegionKind::CleanStack, ctop - csize, csize, tid};
  r.clean_guard_low = {RegionKind::Guard, ctop - csize - g, g, tid};
  r.clean_guard_high = {RegionKind::Guard, ctop, g, tid};

  const std::uint64_t utop = kUncleanBase + static_cast<std::uint64_t>(tid + 1) * kThreadStride;
  const auto usize = static_cast<std::uint64_t>(c.unclean_stack_size);
  r.unclean = {RegionKind::UncleanStack, utop - usize, usize, tid};
  r.unclean_guard_low = {RegionKind::Guard, utop - usize - g, g, tid};
  r.unclean_guard_high = {RegionKind::Guard, utop, g, tid};
  return r;
}

Memory init_memory(const VmConfig &config) {
  config.validate();
  Memory m;
  ThreadRegions r = thread_regions(0, config);
  for (const Region &x : {r.clean, r.clean_guard_low, r.clean_guard_high, r.unclean,
                          r.unclean_guard_low, r.unclean_guard_high})
    m.map(x);
  return m;
}

std::uint64_t canary_value(std::uint64_t seed) {
  return splitmix64(seed ^ 0x53544b43414e5259ULL);
}

CleanFrameLayout clean_frame_layout(const Function &f) {
  CleanFrameLayout L;
  std::int64_t cur = -16;
  for (const auto *a : f.allocas()) {
    if (a->op != Opcode::AllocaStatic)
      continue;
    const std::int64_t align = a->align > 0 ? a->align : 8;
    cur -= a->size;
    cur = -((-cur + align - 1) / align * align);
    L.objects[a->object] = cur;
  }
  L.stack_pointer = -((-cur + 15) / 16 * 16);
  return L;
}

std::uint64_t function_address(const Program &p, std::string_view function) {
  const int i = p.function_index(function);
  if (i < 0)
    throw Error("no function '" + std::string(function) + "'");
  return kCodeBase + static_cast<std::uint64_t>(i) * kCodeStride;
}

} // namespace cleanstack
