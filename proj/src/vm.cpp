#include "cleanstack/vm.hpp"

#include "cleanstack/verify.hpp"

#include <algorithm>
#include <deque>
#include <limits>

namespace cleanstack {

namespace {

constexpr int kNoProv = -1;
constexpr int kUncleanProv = -2; // derived from the unclean stack top
constexpr std::uint64_t kJmpToken = 0x5e7a000000000000ULL;

struct Reg {
  std::int64_t v = 0;
  bool t = false;
  int prov = kNoProv;
};

struct COp {
  bool is_const = true;
  std::int64_t imm = 0;
  int reg = -1;
};

struct CInst {
  const Instruction *src = nullptr;
  int dst = -1;
  std::vector<COp> ops;
  int object = -1;          // stack object index in the function
  std::uint64_t global = 0; // address for global AddrOf
  int callee = -1;          // function index, -1 for externs
  std::vector<int> targets; // block indices (branches) or phi incoming blocks
  int node = 0;
};

struct CObject {
  std::string name;
  std::int64_t size = 0;
  std::int64_t align = 8;
  bool dynamic = false;
  int id = 0; // provenance id
};

struct CFunc {
  const Function *f = nullptr;
  std::vector<std::vector<CInst>> blocks;
  int nregs = 0;
  std::vector<int> param_regs;
  std::vector<CObject> objects;
};

struct Frame {
  int fn = 0;
  int block = 0;
  int index = 0;
  std::vector<Reg> regs;
  std::uint64_t top = 0;
  std::uint64_t sp = 0;
  std::uint64_t expected_ra = 0;
  int ret_reg = -1;
  std::vector<std::uint64_t> obj_addr;
  std::vector<std::int64_t> obj_size;
  std::vector<char> obj_live;
  std::uint64_t uid = 0;
};

struct Thread {
  int id = 0;
  std::vector<Frame> frames;
  bool done = false;
  int blocked_on = -1;
  ThreadRegions regions;
  std::uint64_t unclean_top = 0;
};

struct JmpRecord {
  int thread = 0;
  std::size_t depth = 0;
  std::uint64_t uid = 0;
  int block = 0;
  int index = 0;
  int dst = -1;
  std::uint64_t sp = 0;
};

struct TrapSignal {
  TrapKind kind;
  std::uint64_t address;
  std::string message;
};

struct ExitSignal {
  std::int64_t code;
};

std::uint64_t align_down(std::uint64_t x, std::uint64_t a) { return x & ~(a - 1); }

class Machine {
public:
  Machine(const Program &p, const std::vector<std::uint8_t> &input, const VmConfig &config)
      : p_(p), input_(input), config_(config) {}

  RunOutcome run();

private:
  const Program &p_;
  const std::vector<std::uint8_t> &input_;
  const VmConfig &config_;

  Memory mem_;
  std::vector<CFunc> funcs_;
  std::vector<std::pair<std::string, std::string>> object_names_;
  std::map<std::string, std::uint64_t> global_addr_;
  std::map<std::uint64_t, int> shadow_; // pointer provenance of 8-byte slots
  std::map<std::uint64_t, JmpRecord> jmps_;
  std::deque<Thread> threads_;
  std::size_t input_pos_ = 0;
  std::uint64_t next_uid_ = 1;
  std::uint64_t next_jmp_ = 1;
  int cur_ = 0;
  bool input_warned_ = false;
  RunOutcome out_;

  void compile();
  void init_globals();

  [[noreturn]] void trap(TrapKind k, std::uint64_t addr, std::string msg) {
    throw TrapSignal{k, addr, std::move(msg)};
  }

  Reg eval(const Frame &fr, const COp &op) const {
    if (op.is_const)
      return Reg{op.imm, false, kNoProv};
    return fr.regs[op.reg];
  }

  void require(std::uint64_t addr, std::uint64_t len) {
    if (auto f = mem_.check(addr, len))
      trap(f->kind, f->address,
           f->kind == TrapKind::GuardPageFault ? "access to guard page" : "access to unmapped memory");
  }

  Reg read(std::uint64_t addr, std::int64_t size) {
    require(addr, static_cast<std::uint64_t>(size));
    Reg r;
    std::uint64_t v = 0;
    for (std::int64_t i = 0; i < size; ++i) {
      v |= static_cast<std::uint64_t>(mem_.read_byte(addr + i)) << (8 * i);
      r.t = r.t || mem_.taint_of(addr + i);
    }
    r.v = static_cast<std::int64_t>(v);
    if (size == 8) {
      auto it = shadow_.find(addr);
      if (it != shadow_.end())
        r.prov = it->second;
    }
    return r;
  }

  void clear_shadow(std::uint64_t addr, std::uint64_t len) {
    auto it = shadow_.lower_bound(addr >= 7 ? addr - 7 : 0);
    while (it != shadow_.end() && it->first < addr + len)
      it = shadow_.erase(it);
  }

  /// Object that owns `addr`, by provenance or by live-frame lookup.
  int owner(std::uint64_t addr, int prov) const {
    if (prov >= 0)
      return prov;
    for (const auto &th : threads_) {
      if (th.done)
        continue;
      for (const auto &fr : th.frames) {
        const CFunc &cf = funcs_[fr.fn];
        for (std::size_t o = 0; o < cf.objects.size(); ++o) {
          if (!fr.obj_live[o])
            continue;
          std::uint64_t b = fr.obj_addr[o];
          if (addr >= b && addr < b + static_cast<std::uint64_t>(fr.obj_size[o]))
            return cf.objects[o].id;
        }
      }
    }
    return kNoProv;
  }

  void note_write(std::uint64_t addr, bool tainted, int addr_prov) {
    if (tainted) {
      int o = owner(addr, addr_prov);
      if (o >= 0)
        out_.tainted_objects.insert(object_names_[o]);
    }
    if (addr_prov == kUncleanProv) {
      const Region *r = mem_.region_of(addr);
      if (r && r->kind == RegionKind::CleanStack)
        ++out_.isolation_violations;
    }
  }

  void write(std::uint64_t addr, std::int64_t size, const Reg &val, int addr_prov) {
    require(addr, static_cast<std::uint64_t>(size));
    auto u = static_cast<std::uint64_t>(val.v);
    for (std::int64_t i = 0; i < size; ++i)
      mem_.write_byte(addr + i, static_cast<std::uint8_t>(u >> (8 * i)), val.t);
    clear_shadow(addr, static_cast<std::uint64_t>(size));
    if (size == 8 && val.prov != kNoProv)
      shadow_[addr] = val.prov;
    note_write(addr, val.t, addr_prov);
  }

  Reg input_value(std::int64_t n) {
    std::uint64_t v = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      std::uint8_t b = 0;
      if (input_pos_ < input_.size()) {
        b = input_[input_pos_++];
      } else if (!input_warned_) {
        input_warned_ = true;
        out_.warnings.push_back("input stream exhausted; reading zeros");
      }
      v |= static_cast<std::uint64_t>(b) << (8 * i);
    }
    return Reg{static_cast<std::int64_t>(v), true, kNoProv};
  }

  std::uint64_t return_site(int fn, int node) const {
    return kCodeBase + static_cast<std::uint64_t>(fn) * kCodeStride + static_cast<std::uint64_t>(node) + 1;
  }

  void push_frame(Thread &th, int fn, const std::vector<Reg> &args, std::uint64_t top,
                  std::uint64_t ra, int ret_reg, std::uint64_t saved_fp);
  void enter_block(Frame &fr, int from, int to);
  Thread &spawn_thread(int fn, const std::vector<Reg> &args);
  void finish_thread(Thread &th);
  bool step(); // returns true at a scheduling point
  void do_return(Thread &th, const Reg &value);
  bool schedule_next();
  Trap make_trap(const TrapSignal &s) const;
};

void Machine::compile() {
  if (p_.functions.size() * kCodeStride + kCodeBase >= kGlobalsBase)
    throw Error("too many functions for the code address space");
  for (const auto &f : p_.functions) {
    CFunc cf;
    cf.f = &f;
    std::map<std::string, int> regs, objs;
    auto reg = [&](const std::string &n) {
      auto [it, fresh] = regs.emplace(n, static_cast<int>(regs.size()));
      return it->second;
    };
    for (const auto &prm : f.params)
      cf.param_regs.push_back(reg(prm.name));
    for (const auto *a : f.allocas()) {
      CObject o;
      o.name = a->object;
      o.dynamic = a->op == Opcode::AllocaDynamic;
      o.size = o.dynamic ? 0 : a->size;
      o.align = a->align > 0 ? a->align : 8;
      o.id = static_cast<int>(object_names_.size());
      object_names_.emplace_back(f.name, a->object);
      objs[a->object] = static_cast<int>(cf.objects.size());
      cf.objects.push_back(o);
    }
    int node = 0;
    for (const auto &bb : f.blocks) {
      std::vector<CInst> cb;
      for (const auto &inst : bb.instructions) {
        CInst ci;
        ci.src = &inst;
        ci.node = node++;
        if (!inst.dst.empty())
          ci.dst = reg(inst.dst);
        for (const auto &op : inst.operands) {
          COp c;
          if (op.is_value()) {
            c.is_const = false;
            c.reg = reg(op.name);
          } else {
            c.imm = op.imm;
          }
          ci.ops.push_back(c);
        }
        if (inst.op == Opcode::AllocaStatic || inst.op == Opcode::AllocaDynamic ||
            (inst.op == Opcode::AddrOf && !inst.object_is_global))
          ci.object = objs.at(inst.object);
        if (inst.op == Opcode::Call || inst.op == Opcode::Spawn)
          ci.callee = p_.function_index(inst.callee);
        for (const auto &l : inst.labels)
          ci.targets.push_back(f.block_index(l));
        cb.push_back(std::move(ci));
      }
      cf.blocks.push_back(std::move(cb));
    }
    if (node + 1 >= static_cast<int>(kCodeStride))
      throw Error("function '" + f.name + "' is too large for the code address space");
    cf.nregs = static_cast<int>(regs.size());
    funcs_.push_back(std::move(cf));
  }
}

void Machine::init_globals() {
  std::uint64_t off = 0;
  for (const auto &g : p_.globals) {
    off = (off + 15) / 16 * 16;
    global_addr_[g.name] = kGlobalsBase + off;
    off += static_cast<std::uint64_t>(g.size);
  }
  if (off > 0)
    mem_.map({RegionKind::Globals, kGlobalsBase, (off + 4095) / 4096 * 4096, -1});
  for (auto &fcf : funcs_)
    for (auto &b : fcf.blocks)
      for (auto &ci : b)
        if (ci.src->op == Opcode::AddrOf && ci.src->object_is_global)
          ci.global = global_addr_.at(ci.src->object);

  for (const auto &g : p_.globals) {
    const std::uint64_t a = global_addr_[g.name];
    if (g.is_canary || g.name == kCanaryGlobal) {
      std::uint64_t c = canary_value(config_.seed);
      for (std::int64_t i = 0; i < std::min<std::int64_t>(g.size, 8); ++i)
        mem_.write_byte(a + i, static_cast<std::uint8_t>(c >> (8 * i)), false);
    } else if (g.init) {
      auto u = static_cast<std::uint64_t>(*g.init);
      for (std::int64_t i = 0; i < std::min<std::int64_t>(g.size, 8); ++i)
        mem_.write_byte(a + i, static_cast<std::uint8_t>(u >> (8 * i)), false);
    }
  }
  // Input-backed globals take the head of the stream, in declaration order.
  for (const auto &g : p_.globals) {
    if (!g.is_taint_source)
      continue;
    const std::uint64_t a = global_addr_[g.name];
    bool short_read = false;
    for (std::int64_t i = 0; i < g.size; ++i) {
      std::uint8_t b = 0;
      if (input_pos_ < input_.size())
        b = input_[input_pos_++];
      else
        short_read = true;
      mem_.write_byte(a + i, b, true);
    }
    if (short_read)
      out_.warnings.push_back("input stream shorter than global @" + g.name + "; zero-filled");
  }
}

void Machine::push_frame(Thread &th, int fn, const std::vector<Reg> &args, std::uint64_t top,
                         std::uint64_t ra, int ret_reg, std::uint64_t saved_fp) {
  const CFunc &cf = funcs_[fn];
  write(top - 8, 8, Reg{static_cast<std::int64_t>(ra), false, kNoProv}, kNoProv);
  write(top - 16, 8, Reg{static_cast<std::int64_t>(saved_fp), false, kNoProv}, kNoProv);

  Frame fr;
  fr.fn = fn;
  fr.top = top;
  fr.expected_ra = ra;
  fr.ret_reg = ret_reg;
  fr.uid = next_uid_++;
  fr.regs.assign(cf.nregs, Reg{});
  fr.obj_addr.assign(cf.objects.size(), 0);
  fr.obj_size.assign(cf.objects.size(), 0);
  fr.obj_live.assign(cf.objects.size(), 0);
  std::uint64_t cur = top - 16;
  for (std::size_t o = 0; o < cf.objects.size(); ++o) {
    const CObject &obj = cf.objects[o];
    if (obj.dynamic)
      continue;
    cur = align_down(cur - static_cast<std::uint64_t>(obj.size), static_cast<std::uint64_t>(obj.align));
    fr.obj_addr[o] = cur;
    fr.obj_size[o] = obj.size;
    fr.obj_live[o] = 1;
  }
  fr.sp = align_down(cur, 16);
  if (fr.sp < th.regions.clean.base || fr.sp > top)
    trap(TrapKind::GuardPageFault, th.regions.clean_guard_low.base, "clean stack overflow");
  for (std::size_t i = 0; i < cf.param_regs.size() && i < args.size(); ++i)
    fr.regs[cf.param_regs[i]] = args[i];
  th.frames.push_back(std::move(fr));
}

void Machine::enter_block(Frame &fr, int from, int to) {
  const auto &block = funcs_[fr.fn].blocks[to];
  fr.block = to;
  fr.index = 0;
  // Phis read their inputs simultaneously.
  std::vector<std::pair<int, Reg>> pending;
  std::size_t i = 0;
  for (; i < block.size() && block[i].src->op == Opcode::Phi; ++i) {
    const CInst &ci = block[i];
    bool found = false;
    for (std::size_t k = 0; k < ci.targets.size(); ++k) {
      if (ci.targets[k] == from) {
        pending.emplace_back(ci.dst, eval(fr, ci.ops[k]));
        found = true;
        break;
      }
    }
    if (!found)
      trap(TrapKind::InvalidAccess, 0, "phi has no incoming value for predecessor");
    ++out_.dynamic_instructions;
  }
  for (auto &[d, r] : pending)
    fr.regs[d] = r;
  fr.index = static_cast<int>(i);
}

Thread &Machine::spawn_thread(int fn, const std::vector<Reg> &args) {
  std::size_t live = 0;
  for (const auto &t : threads_)
    live += t.done ? 0 : 1;
  if (live >= config_.max_threads)
    trap(TrapKind::InvalidAccess, 0, "thread limit reached");
  Thread th;
  th.id = static_cast<int>(threads_.size());
  if (static_cast<std::uint64_t>(th.id + 1) * kThreadStride >= kCleanTop - kUncleanBase - kThreadStride)
    trap(TrapKind::InvalidAccess, 0, "thread address space exhausted");
  th.regions = thread_regions(th.id, config_);
  if (th.id != 0) {
    const ThreadRegions &r = th.regions;
    for (const Region &x : {r.clean, r.clean_guard_low, r.clean_guard_high, r.unclean,
                            r.unclean_guard_low, r.unclean_guard_high})
      mem_.map(x);
  }
  th.unclean_top = th.regions.unclean.end();
  threads_.push_back(std::move(th));
  Thread &ref = threads_.back();
  push_frame(ref, fn, args, ref.regions.clean.end() - static_cast<std::uint64_t>(config_.startup_reserve),
             kExitAddress, -1, 0);
  return ref;
}

void Machine::finish_thread(Thread &th) {
  th.done = true;
  th.frames.clear();
  if (th.id == 0)
    return;
  const ThreadRegions &r = th.regions;
  for (const Region &x : {r.clean, r.clean_guard_low, r.clean_guard_high, r.unclean,
                          r.unclean_guard_low, r.unclean_guard_high}) {
    clear_shadow(x.base, x.size);
    mem_.unmap(x.base);
  }
}

void Machine::do_return(Thread &th, const Reg &value) {
  Frame fr = std::move(th.frames.back());
  th.frames.pop_back();
  const std::uint64_t ra = static_cast<std::uint64_t>(read(fr.top - 8, 8).v);
  if (ra != fr.expected_ra)
    out_.ra_corrupted = true;

  if (ra == fr.expected_ra) {
    if (ra == kExitAddress) {
      if (th.id == 0)
        throw ExitSignal{value.v};
      finish_thread(th);
      return;
    }
    Frame &caller = th.frames.back();
    if (fr.ret_reg >= 0)
      caller.regs[fr.ret_reg] = value;
    ++caller.index;
    return;
  }
  if (ra == kExitAddress) {
    if (th.id == 0)
      throw ExitSignal{value.v};
    finish_thread(th);
    return;
  }
  // Control goes wherever the corrupted return address points.
  if (ra >= kCodeBase && (ra - kCodeBase) % kCodeStride == 0 &&
      (ra - kCodeBase) / kCodeStride < funcs_.size()) {
    const int target = static_cast<int>((ra - kCodeBase) / kCodeStride);
    out_.hijack_target = funcs_[target].f->name;
    th.frames.clear();
    std::vector<Reg> args(funcs_[target].param_regs.size());
    push_frame(th, target, args, fr.top, kExitAddress, -1, 0);
    return;
  }
  trap(TrapKind::InvalidAccess, ra, "return to a non-code address");
}

bool Machine::schedule_next() {
  const int n = static_cast<int>(threads_.size());
  for (int k = 1; k <= n; ++k) {
    int c = (cur_ + k) % n;
    Thread &t = threads_[c];
    if (t.done)
      continue;
    if (t.blocked_on >= 0 && !threads_[t.blocked_on].done)
      continue;
    t.blocked_on = -1;
    cur_ = c;
    out_.schedule.push_back(c);
    return true;
  }
  return false;
}

bool Machine::step() {
  Thread &th = threads_[cur_];
  Frame &fr = th.frames.back();
  const CFunc &cf = funcs_[fr.fn];
  const CInst &ci = cf.blocks[fr.block][fr.index];
  const Instruction &inst = *ci.src;
  ++out_.dynamic_instructions;

  auto op = [&](std::size_t i) { return eval(fr, ci.ops[i]); };
  auto set = [&](Reg r) {
    if (ci.dst >= 0)
      fr.regs[ci.dst] = r;
  };
  auto next = [&] { ++fr.index; };

  switch (inst.op) {
  case Opcode::AllocaStatic:
    next();
    return false;
  case Opcode::AllocaDynamic: {
    Reg n = op(0);
    std::uint64_t size = n.v > 0 ? static_cast<std::uint64_t>(n.v) : 0;
    std::uint64_t a = static_cast<std::uint64_t>(cf.objects[ci.object].align);
    std::uint64_t addr = align_down(align_down(fr.sp - size, a), 16);
    if (size > fr.sp || addr < th.regions.clean.base)
      trap(TrapKind::GuardPageFault, th.regions.clean_guard_low.base, "clean stack overflow");
    fr.sp = addr;
    fr.obj_addr[ci.object] = addr;
    fr.obj_size[ci.object] = static_cast<std::int64_t>(size);
    fr.obj_live[ci.object] = 1;
    next();
    return false;
  }
  case Opcode::Load: {
    Reg a = op(0);
    Reg r = read(static_cast<std::uint64_t>(a.v), inst.size);
    set(r);
    next();
    return false;
  }
  case Opcode::Store: {
    Reg a = op(0);
    write(static_cast<std::uint64_t>(a.v), inst.size, op(1), a.prov);
    next();
    return false;
  }
  case Opcode::Copy: {
    Reg d = op(0), s = op(1), len = op(2);
    const auto da = static_cast<std::uint64_t>(d.v), sa = static_cast<std::uint64_t>(s.v);
    for (std::int64_t i = 0; i < len.v; ++i) {
      require(sa + i, 1);
      std::uint8_t b = mem_.read_byte(sa + i);
      bool t = mem_.taint_of(sa + i);
      require(da + i, 1);
      mem_.write_byte(da + i, b, t);
      clear_shadow(da + i, 1);
      note_write(da + i, t, d.prov);
    }
    next();
    return false;
  }
  case Opcode::BinOp: {
    Reg a = op(0), b = op(1);
    auto ua = static_cast<std::uint64_t>(a.v), ub = static_cast<std::uint64_t>(b.v);
    std::int64_t r = 0;
    switch (inst.binop) {
    case BinaryOp::Add:
      r = static_cast<std::int64_t>(ua + ub);
      break;
    case BinaryOp::Sub:
      r = static_cast<std::int64_t>(ua - ub);
      break;
    case BinaryOp::Mul:
      r = static_cast<std::int64_t>(ua * ub);
      break;
    case BinaryOp::SDiv:
    case BinaryOp::SRem:
      if (b.v == 0)
        trap(TrapKind::DivByZero, 0, "division by zero");
      if (a.v == std::numeric_limits<std::int64_t>::min() && b.v == -1)
        r = inst.binop == BinaryOp::SDiv ? a.v : 0;
      else
        r = inst.binop == BinaryOp::SDiv ? a.v / b.v : a.v % b.v;
      break;
    case BinaryOp::And:
      r = a.v & b.v;
      break;
    case BinaryOp::Or:
      r = a.v | b.v;
      break;
    case BinaryOp::Xor:
      r = a.v ^ b.v;
      break;
    case BinaryOp::Shl:
      r = static_cast<std::int64_t>(ua << (ub & 63));
      break;
    case BinaryOp::Shr:
      r = a.v >> (ub & 63);
      break;
    }
    int prov = kNoProv;
    if (inst.binop == BinaryOp::Add || inst.binop == BinaryOp::Sub)
      prov = a.prov != kNoProv ? a.prov : (inst.binop == BinaryOp::Add ? b.prov : kNoProv);
    set(Reg{r, a.t || b.t, prov});
    next();
    return false;
  }
  case Opcode::UnOp: {
    Reg a = op(0);
    auto ua = static_cast<std::uint64_t>(a.v);
    std::int64_t r = 0;
    switch (inst.unop) {
    case UnaryOp::Neg:
      r = static_cast<std::int64_t>(0 - ua);
      break;
    case UnaryOp::Not:
      r = ~a.v;
      break;
    case UnaryOp::Abs:
      r = a.v < 0 ? static_cast<std::int64_t>(0 - ua) : a.v;
      break;
    }
    set(Reg{r, a.t, kNoProv});
    next();
    return false;
  }
  case Opcode::Cmp: {
    Reg a = op(0), b = op(1);
    bool r = false;
    switch (inst.pred) {
    case CmpPred::Eq:
      r = a.v == b.v;
      break;
    case CmpPred::Ne:
      r = a.v != b.v;
      break;
    case CmpPred::Lt:
      r = a.v < b.v;
      break;
    case CmpPred::Le:
      r = a.v <= b.v;
      break;
    case CmpPred::Gt:
      r = a.v > b.v;
      break;
    case CmpPred::Ge:
      r = a.v >= b.v;
      break;
    }
    set(Reg{r ? 1 : 0, a.t || b.t, kNoProv});
    next();
    return false;
  }
  case Opcode::AddrOf: {
    if (inst.object_is_global) {
      set(Reg{static_cast<std::int64_t>(ci.global), false, kNoProv});
    } else {
      if (!fr.obj_live[ci.object])
        trap(TrapKind::InvalidAccess, 0, "address of an object that is not allocated");
      set(Reg{static_cast<std::int64_t>(fr.obj_addr[ci.object]), false, cf.objects[ci.object].id});
    }
    next();
    return false;
  }
  case Opcode::PtrAdd: {
    Reg b = op(0), o = op(1);
    set(Reg{static_cast<std::int64_t>(static_cast<std::uint64_t>(b.v) + static_cast<std::uint64_t>(o.v)),
            b.t || o.t, b.prov});
    next();
    return false;
  }
  case Opcode::PtrToInt:
  case Opcode::IntToPtr:
    set(op(0));
    next();
    return false;
  case Opcode::Phi:
    // Only reached when a block is entered by falling into it at index 0,
    // which cannot happen: enter_block consumes phis.
    trap(TrapKind::InvalidAccess, 0, "phi executed outside block entry");
  case Opcode::Select: {
    Reg c = op(0);
    Reg r = c.v != 0 ? op(1) : op(2);
    r.t = r.t || c.t;
    set(r);
    next();
    return false;
  }
  case Opcode::Call: {
    std::vector<Reg> args;
    for (std::size_t i = 0; i < ci.ops.size(); ++i)
      args.push_back(op(i));
    if (ci.callee < 0) {
      out_.warnings.push_back("call to external '" + inst.callee + "' returns 0");
      set(Reg{});
      next();
      return true;
    }
    push_frame(th, ci.callee, args, fr.sp, return_site(fr.fn, ci.node), ci.dst, fr.top);
    return true;
  }
  case Opcode::Spawn: {
    std::vector<Reg> args;
    for (std::size_t i = 0; i < ci.ops.size(); ++i)
      args.push_back(op(i));
    const int fn = fr.fn, dst = ci.dst;
    const int me = cur_;
    Thread &child = spawn_thread(ci.callee, args);
    // spawn_thread may reallocate the thread vector.
    Frame &self = threads_[me].frames.back();
    (void)fn;
    if (dst >= 0)
      self.regs[dst] = Reg{child.id, false, kNoProv};
    ++self.index;
    return true;
  }
  case Opcode::Join: {
    Reg t = op(0);
    if (t.v < 0 || t.v >= static_cast<std::int64_t>(threads_.size()) || t.v == th.id)
      trap(TrapKind::InvalidAccess, 0, "join on an invalid thread id");
    if (!threads_[t.v].done) {
      --out_.dynamic_instructions; // re-executed once the target finishes
      th.blocked_on = static_cast<int>(t.v);
      return true;
    }
    next();
    return true;
  }
  case Opcode::Input:
    set(input_value(inst.size));
    next();
    return false;
  case Opcode::Output:
    out_.outputs.push_back(op(0).v);
    next();
    return false;
  case Opcode::AtomicRMW: {
    Reg a = op(0);
    Reg old = read(static_cast<std::uint64_t>(a.v), 8);
    write(static_cast<std::uint64_t>(a.v), 8, op(1), a.prov);
    set(old);
    next();
    return false;
  }
  case Opcode::SetJmp: {
    Reg buf = op(0);
    const std::uint64_t token = kJmpToken | next_jmp_++;
    write(static_cast<std::uint64_t>(buf.v), 8, Reg{static_cast<std::int64_t>(token), false, kNoProv},
          buf.prov);
    jmps_[token] = JmpRecord{th.id, th.frames.size() - 1, fr.uid, fr.block, fr.index, ci.dst, fr.sp};
    set(Reg{0, false, kNoProv});
    next();
    return false;
  }
  case Opcode::LongJmp: {
    Reg buf = op(0), val = op(1);
    const auto token = static_cast<std::uint64_t>(read(static_cast<std::uint64_t>(buf.v), 8).v);
    auto it = jmps_.find(token);
    if (it == jmps_.end())
      trap(TrapKind::InvalidAccess, static_cast<std::uint64_t>(buf.v), "longjmp through a corrupt buffer");
    const JmpRecord rec = it->second;
    if (rec.thread != th.id || rec.depth >= th.frames.size() || th.frames[rec.depth].uid != rec.uid)
      trap(TrapKind::InvalidAccess, static_cast<std::uint64_t>(buf.v), "longjmp to a dead frame");
    th.frames.resize(rec.depth + 1);
    Frame &target = th.frames.back();
    target.block = rec.block;
    target.index = rec.index + 1;
    target.sp = rec.sp;
    if (rec.dst >= 0)
      target.regs[rec.dst] = Reg{val.v == 0 ? 1 : val.v, val.t, kNoProv};
    return false;
  }
  case Opcode::UncleanTop:
    set(Reg{static_cast<std::int64_t>(th.unclean_top), false, kUncleanProv});
    next();
    return false;
  case Opcode::UncleanSetTop:
    th.unclean_top = static_cast<std::uint64_t>(op(0).v);
    out_.unclean_top_trace.push_back({th.id, th.unclean_top});
    next();
    return false;
  case Opcode::StackChkFail:
    trap(TrapKind::CanaryMismatch, 0, "stack canary mismatch");
  case Opcode::Branch:
    enter_block(fr, fr.block, ci.targets[0]);
    return false;
  case Opcode::CondBranch:
    enter_block(fr, fr.block, op(0).v != 0 ? ci.targets[0] : ci.targets[1]);
    return false;
  case Opcode::Return: {
    Reg v = ci.ops.empty() ? Reg{} : op(0);
    do_return(th, v);
    return true;
  }
  }
  trap(TrapKind::InvalidAccess, 0, "unknown instruction");
}

Trap Machine::make_trap(const TrapSignal &s) const {
  Trap t;
  t.kind = s.kind;
  t.address = s.address;
  t.message = s.message;
  t.thread = cur_;
  if (cur_ < static_cast<int>(threads_.size()) && !threads_[cur_].frames.empty()) {
    const Frame &fr = threads_[cur_].frames.back();
    const Function &f = *funcs_[fr.fn].f;
    t.function = f.name;
    t.block = f.blocks[fr.block].label;
    t.index = fr.index;
  }
  return t;
}

RunOutcome Machine::run() {
  config_.validate();
  require_valid(p_);
  const int entry = p_.function_index(p_.entry);
  mem_ = init_memory(config_);
  compile();
  init_globals();

  try {
    std::vector<Reg> args(funcs_[entry].param_regs.size());
    Thread &main = spawn_thread(entry, args);
    (void)main;
    cur_ = 0;
    out_.schedule.push_back(0);
    for (;;) {
      if (out_.dynamic_instructions >= config_.step_limit) {
        out_.status = RunStatus::StepLimit;
        break;
      }
      bool yield = step();
      if (yield || threads_[cur_].done || threads_[cur_].blocked_on >= 0) {
        if (!schedule_next())
          trap(TrapKind::InvalidAccess, 0, "deadlock: every thread is blocked");
      }
    }
  } catch (const ExitSignal &e) {
    out_.status = RunStatus::Exited;
    out_.exit_code = e.code;
  } catch (const TrapSignal &s) {
    out_.status = RunStatus::Trapped;
    out_.trap = make_trap(s);
  }
  out_.dynamic_taint = mem_.tainted_ranges();
  return std::move(out_);
}

} // namespace

RunOutcome run_program(const Program &p, const std::vector<std::uint8_t> &input,
                       const VmConfig &config) {
  Machine m(p, input, config);
  return m.run();
}

} // namespace cleanstack
