#include "jsim/kernels/snapshot.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

namespace jsim::kernels {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error("snapshot: " + what); }

void put(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) bad("unrepresentable value");
  out.append(buf, p);
}

class Scanner {
 public:
  explicit Scanner(std::string_view text) : text_(text) {}

  bool next_line(std::string_view& line) {
    while (pos_ < text_.size()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      if (!line.empty()) return true;
    }
    return false;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string_view take_word(std::string_view& line) {
  while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
  std::size_t end = 0;
  while (end < line.size() && line[end] != ' ') ++end;
  std::string_view word = line.substr(0, end);
  line.remove_prefix(end);
  return word;
}

double take_double(std::string_view& line) {
  const std::string_view w = take_word(line);
  double v = 0;
  auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
  if (ec != std::errc() || p != w.data() + w.size() || w.empty()) bad("bad number");
  return v;
}

std::int64_t take_int(std::string_view& line) {
  const std::string_view w = take_word(line);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
  if (ec != std::errc() || p != w.data() + w.size() || w.empty()) bad("bad integer");
  return v;
}

void read_body(Scanner& sc, ParticleSet& set, Eigen::Index n, bool stellar) {
  set = ParticleSet::zeros(n, stellar);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::string_view line;
    if (!sc.next_line(line)) bad("truncated particle block");
    set.ids[static_cast<std::size_t>(i)] = take_int(line);
    set.mass(i) = take_double(line);
    for (int k = 0; k < 3; ++k) set.pos(k, i) = take_double(line);
    for (int k = 0; k < 3; ++k) set.vel(k, i) = take_double(line);
    if (stellar) {
      set.age(i) = take_double(line);
      set.m0(i) = take_double(line);
    }
    if (!take_word(line).empty()) bad("trailing fields on particle line");
  }
}

}  // namespace

std::string to_text(const Snapshot& snap) {
  std::string out;
  out += "jsim-snapshot 1\n";
  out += "units " + snap.units[0] + " " + snap.units[1] + " " + snap.units[2] + "\n";
  out += "stars " + std::to_string(snap.stars.n()) + "\n";
  for (Eigen::Index i = 0; i < snap.stars.n(); ++i) {
    const ParticleSet& s = snap.stars;
    out += std::to_string(s.ids[static_cast<std::size_t>(i)]);
    for (double v : {s.mass(i), s.pos(0, i), s.pos(1, i), s.pos(2, i), s.vel(0, i), s.vel(1, i),
                     s.vel(2, i), s.stellar() ? s.age(i) : 0.0, s.stellar() ? s.m0(i) : s.mass(i)}) {
      out += ' ';
      put(out, v);
    }
    out += '\n';
  }
  out += "gas " + std::to_string(snap.gas.n()) + "\n";
  for (Eigen::Index i = 0; i < snap.gas.n(); ++i) {
    const ParticleSet& s = snap.gas;
    out += std::to_string(s.ids[static_cast<std::size_t>(i)]);
    for (double v : {s.mass(i), s.pos(0, i), s.pos(1, i), s.pos(2, i), s.vel(0, i), s.vel(1, i),
                     s.vel(2, i)}) {
      out += ' ';
      put(out, v);
    }
    out += '\n';
  }
  return out;
}

Snapshot from_text(std::string_view text) {
  Scanner sc(text);
  std::string_view line;
  if (!sc.next_line(line) || line != "jsim-snapshot 1") bad("missing header");
  if (!sc.next_line(line) || take_word(line) != "units") bad("missing units");
  Snapshot snap;
  for (auto& u : snap.units) {
    const std::string_view w = take_word(line);
    if (w.empty()) bad("missing unit name");
    u = std::string(w);
  }
  if (!sc.next_line(line) || take_word(line) != "stars") bad("missing stars block");
  const std::int64_t ns = take_int(line);
  if (ns < 0) bad("negative count");
  read_body(sc, snap.stars, static_cast<Eigen::Index>(ns), true);
  if (!sc.next_line(line) || take_word(line) != "gas") bad("missing gas block");
  const std::int64_t ng = take_int(line);
  if (ng < 0) bad("negative count");
  read_body(sc, snap.gas, static_cast<Eigen::Index>(ng), false);
  return snap;
}

void save_snapshot(const std::string& path, const Snapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) bad("cannot write " + path);
  const std::string text = to_text(snap);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) bad("short write to " + path);
}

Snapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

}  // namespace jsim::kernels
