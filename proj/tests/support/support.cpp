#include "support.hpp"

#include "cleanstack/frontend.hpp"
#include "cleanstack/verify.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <sys/wait.h>
#include <unistd.h>

namespace cstest {

std::string fixture_path(const std::string &name) {
  return std::string(CLEANSTACK_FIXTURE_DIR) + "/" + name;
}

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Program load_fixture(const std::string &name) {
  Program p = parse_file(fixture_path(name));
  require_valid(p);
  return p;
}

std::vector<std::string> fixture_names() {
  std::vector<std::string> out;
  for (const auto &e : std::filesystem::directory_iterator(CLEANSTACK_FIXTURE_DIR))
    if (e.path().extension() == ".cir")
      out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::string drain(int fd) {
  std::string s;
  std::array<char, 4096> buf;
  ssize_t n;
  while ((n = read(fd, buf.data(), buf.size())) > 0)
    s.append(buf.data(), static_cast<std::size_t>(n));
  return s;
}

} // namespace

CliResult run_cli(const std::vector<std::string> &args,
                  const std::map<std::string, std::string> &env, const std::string &stdin_text) {
  // Output goes to temporary files so large outputs cannot deadlock the pipes.
  char out_tpl[] = "/tmp/cstest_outXXXXXX";
  char err_tpl[] = "/tmp/cstest_errXXXXXX";
  char in_tpl[] = "/tmp/cstest_inXXXXXX";
  const int out_fd = mkstemp(out_tpl);
  const int err_fd = mkstemp(err_tpl);
  const int in_fd = mkstemp(in_tpl);
  if (out_fd < 0 || err_fd < 0 || in_fd < 0)
    throw std::runtime_error("mkstemp failed");
  if (!stdin_text.empty() &&
      write(in_fd, stdin_text.data(), stdin_text.size()) != static_cast<ssize_t>(stdin_text.size()))
    throw std::runtime_error("cannot stage stdin");
  lseek(in_fd, 0, SEEK_SET);

  const pid_t pid = fork();
  if (pid < 0)
    throw std::runtime_error("fork failed");
  if (pid == 0) {
    dup2(in_fd, 0);
    dup2(out_fd, 1);
    dup2(err_fd, 2);
    for (const auto &[k, v] : env)
      setenv(k.c_str(), v.c_str(), 1);
    std::vector<char *> argv;
    std::string exe = CLEANSTACK_CLI_PATH;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto &a : copy)
      argv.push_back(a.data());
    argv.push_back(nullptr);
    execv(exe.c_str(), argv.data());
    _exit(127);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  lseek(out_fd, 0, SEEK_SET);
  lseek(err_fd, 0, SEEK_SET);
  r.out = drain(out_fd);
  r.err = drain(err_fd);
  close(out_fd);
  close(err_fd);
  close(in_fd);
  unlink(out_tpl);
  unlink(err_tpl);
  unlink(in_tpl);
  return r;
}

// ---------------------------------------------------------------------------
// Random programs

namespace {

struct Obj {
  std::string name;
  std::int64_t size = 8;
  enum Kind { Scalar, Array, Slot, Dynamic, Counter } kind = Scalar;
  int slot_target = -1; // Slot: object whose base it holds
};

struct Ptr {
  std::string name;
  int obj = -1;
  std::int64_t offset = 0;
};

class Gen {
public:
  Gen(std::uint64_t seed, const GenOptions &o) : rng_(seed), o_(o) {}

  Generated run();

private:
  std::mt19937_64 rng_;
  GenOptions o_;
  std::vector<Obj> objs_;
  std::vector<std::string> lines_;
  int budget_ = 0;
  int fresh_ = 0;
  bool helper_ = false;
  bool input_global_ = false;
  int counter_ = -1;

  // values visible everywhere (entry) and in the current block
  std::vector<std::string> ints_entry_, ints_local_;
  std::vector<Ptr> ptrs_entry_, ptrs_local_;
  std::map<int, std::string> base_ptr_; // object -> entry addrof value
  std::string zero_ptr_, gin_ptr_;

  int pick(int n) { return static_cast<int>(rng_() % static_cast<std::uint64_t>(n)); }
  bool chance(int pct) { return pick(100) < pct; }
  std::string fresh(const char *stem) { return std::string("%") + stem + std::to_string(fresh_++); }
  void emit(const std::string &s) {
    lines_.push_back("  " + s);
    --budget_;
  }

  std::string any_int() {
    const std::size_t n = ints_entry_.size() + ints_local_.size();
    if (n == 0 || chance(20))
      return std::to_string(static_cast<std::int64_t>(pick(200)) - 50);
    const std::size_t i = static_cast<std::size_t>(pick(static_cast<int>(n)));
    return i < ints_entry_.size() ? ints_entry_[i] : ints_local_[i - ints_entry_.size()];
  }

  // A pointer with at least `need` accessible bytes, not into a slot object
  // unless `slots` is set.
  const Ptr *any_ptr(std::int64_t need, bool data_only = true) {
    std::vector<const Ptr *> c;
    for (const auto *pool : {&ptrs_entry_, &ptrs_local_})
      for (const auto &p : *pool) {
        const Obj &o = objs_[static_cast<std::size_t>(p.obj)];
        if (data_only && (o.kind == Obj::Slot || o.kind == Obj::Counter))
          continue;
        if (o.size - p.offset >= need)
          c.push_back(&p);
      }
    if (c.empty())
      return nullptr;
    return c[static_cast<std::size_t>(pick(static_cast<int>(c.size())))];
  }

  void add_int(const std::string &v, bool entry) { (entry ? ints_entry_ : ints_local_).push_back(v); }
  void add_ptr(Ptr p, bool entry) { (entry ? ptrs_entry_ : ptrs_local_).push_back(std::move(p)); }

  void statement(bool entry);
  void helper(std::vector<std::string> &out);
};

void Gen::statement(bool entry) {
  switch (pick(14)) {
  case 0: { // binop
    static const char *ops[] = {"add", "sub", "mul", "and", "or", "xor"};
    const std::string d = fresh("v");
    emit(d + " = " + ops[pick(6)] + " " + any_int() + ", " + any_int());
    add_int(d, entry);
    break;
  }
  case 1: { // division and shifts by safe constants
    static const char *ops[] = {"sdiv", "srem", "shl", "shr"};
    const int k = pick(4);
    const std::string rhs = k < 2 ? std::to_string(pick(9) + 1) : std::to_string(pick(64));
    const std::string d = fresh("v");
    emit(d + " = " + ops[k] + " " + any_int() + ", " + rhs);
    add_int(d, entry);
    break;
  }
  case 2: { // unop / cmp / select
    static const char *un[] = {"neg", "not", "abs"};
    static const char *cmps[] = {"eq", "ne", "lt", "le", "gt", "ge"};
    const std::string d = fresh("v");
    const int k = pick(3);
    if (k == 0)
      emit(d + " = " + un[pick(3)] + " " + any_int());
    else if (k == 1)
      emit(d + " = cmp " + cmps[pick(6)] + " " + any_int() + ", " + any_int());
    else
      emit(d + " = select " + any_int() + ", " + any_int() + ", " + any_int());
    add_int(d, entry);
    break;
  }
  case 3:
  case 4: { // load
    if (const Ptr *p = any_ptr(8, false)) {
      const Obj &o = objs_[static_cast<std::size_t>(p->obj)];
      const std::string d = fresh("l");
      emit(d + " = load 8, " + p->name);
      if (o.kind == Obj::Slot)
        add_ptr(Ptr{d, o.slot_target, 0}, entry);
      else
        add_int(d, entry);
    }
    break;
  }
  case 5:
  case 6: { // store an integer
    if (const Ptr *p = any_ptr(8))
      emit("store 8, " + p->name + ", " + any_int());
    break;
  }
  case 7: { // store an address into its slot
    for (std::size_t i = 0; i < objs_.size(); ++i)
      if (objs_[i].kind == Obj::Slot) {
        const int t = objs_[i].slot_target;
        emit("store 8, " + base_ptr_.at(static_cast<int>(i)) + ", " + base_ptr_.at(t));
        break;
      }
    break;
  }
  case 8: { // constant or masked pointer arithmetic
    if (const Ptr *p = any_ptr(16)) {
      const Obj &o = objs_[static_cast<std::size_t>(p->obj)];
      const std::string d = fresh("q");
      const std::int64_t room = (o.size - p->offset - 8) / 8;
      if (p->offset == 0 && chance(50) && o.size >= 16 && (o.size & (o.size - 1)) == 0) {
        const std::string m = fresh("m");
        emit(m + " = and " + any_int() + ", " + std::to_string(o.size - 8));
        emit(d + " = ptradd " + p->name + ", " + m);
        // The offset is unknown; only the last 8 bytes are sure to be in range.
        add_ptr(Ptr{d, p->obj, o.size - 8}, entry);
      } else {
        const std::int64_t k = 8 * (1 + pick(static_cast<int>(std::max<std::int64_t>(room, 1))));
        emit(d + " = ptradd " + p->name + ", " + std::to_string(std::min(k, 8 * room)));
        add_ptr(Ptr{d, p->obj, p->offset + std::min(k, 8 * room)}, entry);
      }
    }
    break;
  }
  case 9: { // pointer/integer round trip
    if (const Ptr *p = any_ptr(8, false)) {
      const Ptr src = *p;
      const std::string i = fresh("pi"), d = fresh("pp");
      emit(i + " = ptrtoint " + src.name);
      emit(d + " = inttoptr " + i);
      add_ptr(Ptr{d, src.obj, src.offset}, entry);
    }
    break;
  }
  case 10: // output
    emit("output " + any_int());
    break;
  case 11: { // copy
    const Ptr *dst = any_ptr(8);
    if (!dst)
      break;
    const Ptr d = *dst;
    const std::int64_t droom = objs_[static_cast<std::size_t>(d.obj)].size - d.offset;
    if (input_global_ && chance(50)) {
      emit("copy " + d.name + ", " + gin_ptr_ + ", " + std::to_string(std::min<std::int64_t>(droom, 16)));
    } else if (const Ptr *src = any_ptr(8)) {
      const std::int64_t sroom = objs_[static_cast<std::size_t>(src->obj)].size - src->offset;
      emit("copy " + d.name + ", " + src->name + ", " + std::to_string(std::min(droom, sroom)));
    }
    break;
  }
  case 12: { // call or input
    const Ptr *p = helper_ ? any_ptr(8) : nullptr;
    const std::string r = fresh("r");
    if (p)
      emit(r + " = call h(" + p->name + ", " + any_int() + ")");
    else
      emit(r + " = input " + std::to_string(1 + pick(8)));
    add_int(r, entry);
    break;
  }
  case 13: { // atomic read-modify-write
    if (const Ptr *p = any_ptr(8)) {
      const std::string r = fresh("o");
      emit(r + " = atomicrmw " + p->name + ", " + any_int());
      add_int(r, entry);
    }
    break;
  }
  }
}

Generated Gen::run() {
  budget_ = o_.max_instructions;
  helper_ = o_.calls && chance(50);
  input_global_ = o_.input_global && chance(50);
  if (helper_)
    budget_ -= 3;

  // Objects.
  const int nobj = 1 + pick(3);
  for (int i = 0; i < nobj; ++i) {
    Obj o;
    o.name = "o" + std::to_string(i);
    const int k = pick(10);
    if (k < 4) {
      o.kind = Obj::Array;
      o.size = std::int64_t{16} << pick(3);
    } else if (k < 6 && o_.dynamic) {
      o.kind = Obj::Dynamic;
      o.size = std::int64_t{16} << pick(2);
    } else if (k < 8 || i == 0) {
      o.kind = Obj::Scalar;
    } else {
      o.kind = Obj::Slot;
      o.slot_target = pick(i);
    }
    objs_.push_back(o);
  }
  const int nblocks_wanted = 1 + pick(o_.max_blocks);
  const bool want_loop = o_.loops && nblocks_wanted >= 4 && chance(60);
  if (want_loop) {
    Obj c;
    c.name = "ctr";
    c.kind = Obj::Counter;
    counter_ = static_cast<int>(objs_.size());
    objs_.push_back(c);
  }

  // Entry prologue: allocate, take addresses, initialise.
  lines_.push_back("entry:");
  for (const auto &o : objs_) {
    if (o.kind == Obj::Dynamic)
      emit("%obj." + o.name + " = alloca_dyn " + std::to_string(o.size) + ", align 16");
    else
      emit("%obj." + o.name + " = alloca " + std::to_string(o.size) + ", align 8" +
           (o.kind == Obj::Array ? ", array" : ""));
  }
  bool need_zero = false;
  for (const auto &o : objs_)
    need_zero = need_zero || o.size > 8;
  if (need_zero) {
    zero_ptr_ = "%zero";
    emit(zero_ptr_ + " = addrof @zero");
  }
  if (input_global_) {
    gin_ptr_ = "%gin";
    emit(gin_ptr_ + " = addrof @g");
  }
  for (std::size_t i = 0; i < objs_.size(); ++i) {
    const std::string p = "%p" + objs_[i].name;
    emit(p + " = addrof %obj." + objs_[i].name);
    base_ptr_[static_cast<int>(i)] = p;
    ptrs_entry_.push_back(Ptr{p, static_cast<int>(i), 0});
  }
  for (std::size_t i = 0; i < objs_.size(); ++i) {
    const Obj &o = objs_[i];
    const std::string &p = base_ptr_.at(static_cast<int>(i));
    if (o.kind == Obj::Slot)
      emit("store 8, " + p + ", " + base_ptr_.at(o.slot_target));
    else if (o.size > 8)
      emit("copy " + p + ", " + zero_ptr_ + ", " + std::to_string(o.size));
    else
      emit("store 8, " + p + ", 0");
  }
  const std::string in0 = fresh("in");
  emit(in0 + " = input 8");
  ints_entry_.push_back(in0);

  // Block plan. A loop occupies a header h and body h+1 with h >= 1.
  const int nb = std::max(1, std::min(nblocks_wanted, 1 + std::max(0, budget_ / 4)));
  int loop_h = -1;
  if (want_loop && nb >= 4)
    loop_h = 1 + pick(nb - 3); // h+1 < nb-1 so an exit block exists
  auto label = [](int b) { return b == 0 ? std::string("entry") : "b" + std::to_string(b); };

  // Successors, chosen up front so phis know their predecessors. Block b
  // always reaches b+1 (the header reaches the block after its body), so
  // every block is reachable.
  std::vector<std::vector<int>> succ(static_cast<std::size_t>(nb));
  auto forward_target = [&](int from) {
    std::vector<int> c;
    for (int j = from + 1; j < nb; ++j)
      if (!(loop_h >= 0 && j == loop_h + 1))
        c.push_back(j);
    return c[static_cast<std::size_t>(pick(static_cast<int>(c.size())))];
  };
  for (int b = 0; b + 1 < nb; ++b) {
    if (b == loop_h)
      succ[b] = {b + 1, b + 2};
    else if (loop_h >= 0 && b == loop_h + 1)
      succ[b] = {loop_h};
    else if (chance(50))
      succ[b] = {b + 1, forward_target(b)};
    else
      succ[b] = {b + 1};
  }
  std::vector<std::vector<int>> pred(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b)
    for (int s : succ[b])
      if (std::find(pred[s].begin(), pred[s].end(), b) == pred[s].end())
        pred[s].push_back(b);

  const int reserve_per_block = 1;
  int loop_overhead = loop_h >= 0 ? 6 : 0;
  for (int b = 0; b < nb; ++b) {
    if (b > 0) {
      lines_.push_back(label(b) + ":");
      ints_local_.clear();
      ptrs_local_.clear();
      if (pred[b].size() > 1 && chance(60) && b != loop_h) {
        std::string phi = fresh("phi");
        std::string line = phi + " = phi ";
        for (std::size_t k = 0; k < pred[b].size(); ++k) {
          if (k)
            line += ", ";
          line += "[" + (ints_entry_.empty() || chance(30) ? std::to_string(pick(9))
                                                           : ints_entry_[static_cast<std::size_t>(
                                                                 pick(static_cast<int>(ints_entry_.size())))]) +
                  ", " + label(pred[b][k]) + "]";
        }
        emit(line);
        ints_local_.push_back(phi);
      }
    }
    if (b == loop_h) {
      const std::string c = fresh("c"), m = fresh("m");
      emit(c + " = load 8, " + base_ptr_.at(counter_));
      emit(m + " = cmp lt " + c + ", " + std::to_string(2 + pick(3)));
      emit("condbr " + m + ", " + label(succ[b][0]) + ", " + label(succ[b][1]));
      continue;
    }
    const int blocks_left = nb - b - 1;
    const int room = budget_ - reserve_per_block * (blocks_left + 1) -
                     (b <= loop_h + 1 ? loop_overhead : 0) - 2;
    const int nstmts = room > 0 ? pick(std::min(room, 6) + 1) : 0;
    const int start = budget_;
    while (start - budget_ < nstmts && budget_ > reserve_per_block * (blocks_left + 1) + 2 +
                                                     (b <= loop_h + 1 ? loop_overhead : 0))
      statement(b == 0);
    if (loop_h >= 0 && b == loop_h + 1) {
      const std::string c = fresh("c"), d = fresh("c");
      emit(c + " = load 8, " + base_ptr_.at(counter_));
      emit(d + " = add " + c + ", 1");
      emit("store 8, " + base_ptr_.at(counter_) + ", " + d);
      emit("br " + label(loop_h));
      loop_overhead = 0;
      continue;
    }
    if (b + 1 == nb) {
      if (budget_ > 1)
        emit("output " + any_int());
      emit(chance(50) ? "ret 0" : "ret " + any_int());
    } else if (succ[b].size() == 2) {
      std::string cond = any_int();
      emit("condbr " + cond + ", " + label(succ[b][0]) + ", " + label(succ[b][1]));
    } else {
      emit("br " + label(succ[b][0]));
    }
  }

  std::vector<std::string> out{"entry main", "global @zero 64"};
  if (input_global_)
    out.push_back("global @g 16 input");
  if (helper_)
    helper(out);
  out.push_back("");
  out.push_back("func main() {");
  out.insert(out.end(), lines_.begin(), lines_.end());
  out.push_back("}");
  std::string text;
  for (const auto &l : out)
    text += l + "\n";

  Generated g;
  g.text = text;
  g.program = parse_module(text, "<generated>");
  const VerifyReport r = verify_program(g.program);
  if (!r.empty())
    throw std::runtime_error("generator produced an invalid program:\n" + format_violation(r[0]) +
                             "\n" + text);
  const std::size_t n_input = 512;
  g.input.resize(n_input);
  for (auto &b : g.input)
    b = static_cast<std::uint8_t>(rng_());
  return g;
}

void Gen::helper(std::vector<std::string> &out) {
  out.push_back("");
  out.push_back("func h(%p: ptr, %x: i64) {");
  out.push_back("entry:");
  out.push_back("  store 8, %p, %x");
  out.push_back("  %y = add %x, 1");
  out.push_back("  ret %y");
  out.push_back("}");
}

} // namespace

Generated random_program(std::uint64_t seed, const GenOptions &opts) {
  Gen g(seed, opts);
  return g.run();
}

// ---------------------------------------------------------------------------
// Oracles

std::vector<NodeState> chaotic_fixpoint(const Function &f, const CFG &cfg, const TaintContext &ctx,
                                        const FactSet &seeds, std::uint64_t order_seed) {
  const std::size_t n = cfg.size();
  std::vector<NodeState> st(n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(order_seed);
  bool changed = true;
  while (changed) {
    changed = false;
    std::shuffle(order.begin(), order.end(), rng);
    for (int v : order) {
      FactSet in;
      if (v == 0)
        in = seeds;
      for (int p : cfg.pred[static_cast<std::size_t>(v)])
        in.insert(st[p].out.begin(), st[p].out.end());
      FactSet out = transfer(cfg.inst(f, v), in, ctx);
      if (in != st[v].in || out != st[v].out) {
        st[v].in = std::move(in);
        st[v].out = std::move(out);
        changed = true;
      }
    }
  }
  return st;
}

std::map<std::string, std::int64_t> pack(const std::vector<PackObject> &order,
                                         std::size_t canary_pos) {
  std::map<std::string, std::int64_t> at;
  std::int64_t cur = 0;
  for (std::size_t i = 0; i <= order.size(); ++i) {
    if (i == canary_pos) {
      cur = (cur + 7) / 8 * 8;
      at["<canary>"] = cur;
      cur += 8;
    }
    if (i == order.size())
      break;
    const auto &o = order[i];
    cur = (cur + o.align - 1) / o.align * o.align;
    at[o.name] = cur;
    cur += o.size;
  }
  return at;
}

Enumeration enumerate_single_guess(const std::vector<PackObject> &objects,
                                   const std::string &buffer, const std::string &target,
                                   std::int64_t delta, bool canary_randomized) {
  std::vector<std::size_t> idx(objects.size());
  std::iota(idx.begin(), idx.end(), 0);
  Enumeration e;
  do {
    std::vector<PackObject> order;
    for (std::size_t i : idx)
      order.push_back(objects[i]);
    const std::size_t lo = canary_randomized ? 0 : objects.size();
    for (std::size_t c = lo; c <= objects.size(); ++c) {
      auto at = pack(order, c);
      ++e.total;
      if (at.at(target) - at.at(buffer) == delta)
        ++e.hits;
    }
  } while (std::next_permutation(idx.begin(), idx.end()));
  return e;
}

LinearFit fit_line(const std::vector<double> &x, const std::vector<double> &y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

} // namespace cstest
