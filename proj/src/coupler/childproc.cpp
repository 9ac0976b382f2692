#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "jsim/coupler/daemon.hpp"

// Pipe transport between a script process and a daemon child. Framing:
//   request  u8 op, u32 LE length, body
//   reply    u8 status (0 ok, 1 error), u32 LE length, body
// An error reply's body is the daemon's message text.

namespace jsim::coupler {

namespace {

bool read_exact(int fd, void* buf, std::size_t n) {
  auto* p = static_cast<std::uint8_t*>(buf);
  while (n > 0) {
    const ssize_t got = ::read(fd, p, n);
    if (got == 0) return false;  // peer closed
    if (got < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += got;
    n -= static_cast<std::size_t>(got);
  }
  return true;
}

bool write_all(int fd, const void* buf, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(buf);
  while (n > 0) {
    const ssize_t put = ::write(fd, p, n);
    if (put < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    p += put;
    n -= static_cast<std::size_t>(put);
  }
  return true;
}

void put_header(std::uint8_t (&hdr)[5], std::uint8_t tag, std::uint32_t len) {
  hdr[0] = tag;
  hdr[1] = static_cast<std::uint8_t>(len);
  hdr[2] = static_cast<std::uint8_t>(len >> 8);
  hdr[3] = static_cast<std::uint8_t>(len >> 16);
  hdr[4] = static_cast<std::uint8_t>(len >> 24);
}

std::uint32_t header_len(const std::uint8_t (&hdr)[5]) {
  return static_cast<std::uint32_t>(hdr[1]) | static_cast<std::uint32_t>(hdr[2]) << 8 |
         static_cast<std::uint32_t>(hdr[3]) << 16 | static_cast<std::uint32_t>(hdr[4]) << 24;
}

}  // namespace

PipeSession::PipeSession(const std::string& binary, const std::string& endpoint,
                         std::vector<std::string> extra_args) {
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(std::string("pipe: ") + std::strerror(errno));
  }

  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    throw Error(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    std::vector<std::string> args{binary, "daemon-serve", "--endpoint", endpoint};
    args.insert(args.end(), extra_args.begin(), extra_args.end());
    std::vector<char*> argv;
    argv.reserve(args.size() + 1);
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execv(binary.c_str(), argv.data());
    ::_exit(127);
  }

  ::close(to_child[0]);
  ::close(from_child[1]);
  to_child_ = to_child[1];
  from_child_ = from_child[0];
  pid_ = pid;
}

PipeSession::~PipeSession() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    ::kill(static_cast<pid_t>(pid_), SIGTERM);
    int status = 0;
    ::waitpid(static_cast<pid_t>(pid_), &status, 0);
  }
}

wire::Bytes PipeSession::request(std::uint8_t op, const wire::Bytes& body) {
  if (pid_ <= 0) throw DaemonUnreachable("daemon child already reaped");
  std::uint8_t hdr[5];
  put_header(hdr, op, static_cast<std::uint32_t>(body.size()));
  if (!write_all(to_child_, hdr, sizeof hdr) ||
      (!body.empty() && !write_all(to_child_, body.data(), body.size())))
    throw DaemonUnreachable("daemon pipe broke while writing");

  if (!read_exact(from_child_, hdr, sizeof hdr))
    throw DaemonUnreachable("daemon closed the pipe");
  const std::uint8_t status = hdr[0];
  wire::Bytes reply(header_len(hdr));
  if (!reply.empty() && !read_exact(from_child_, reply.data(), reply.size()))
    throw DaemonUnreachable("daemon reply truncated");
  if (status != 0) throw Error(std::string(reply.begin(), reply.end()));
  return reply;
}

int PipeSession::wait() {
  if (pid_ <= 0) return -1;
  int status = 0;
  ::waitpid(static_cast<pid_t>(pid_), &status, 0);
  pid_ = -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

int serve_pipe(Daemon& daemon, int in_fd, int out_fd) {
  for (;;) {
    std::uint8_t hdr[5];
    if (!read_exact(in_fd, hdr, sizeof hdr)) return 0;  // session ended
    const std::uint8_t op = hdr[0];
    wire::Bytes body(header_len(hdr));
    if (!body.empty() && !read_exact(in_fd, body.data(), body.size())) return 1;

    wire::Bytes reply;
    std::uint8_t status = 0;
    try {
      reply = daemon.handle(op, body);
    } catch (const std::exception& e) {
      status = 1;
      const std::string what = e.what();
      reply.assign(what.begin(), what.end());
    }
    put_header(hdr, status, static_cast<std::uint32_t>(reply.size()));
    if (!write_all(out_fd, hdr, sizeof hdr) ||
        (!reply.empty() && !write_all(out_fd, reply.data(), reply.size())))
      return 1;
    if (op == linkop::stop && status == 0) return 0;
  }
}

}  // namespace jsim::coupler
