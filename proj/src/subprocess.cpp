#include "tvmerge/subprocess.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "tvmerge/errors.hpp"

namespace tvmerge {

SubprocessResult run_subprocess(const std::vector<std::string>& argv) {
    if (argv.empty()) throw EvaluatorError("empty command");

    int pipe_fd[2];
    if (::pipe(pipe_fd) != 0) throw IoError(std::string("pipe: ") + std::strerror(errno));

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(pipe_fd[0]);
        ::close(pipe_fd[1]);
        throw IoError(std::string("fork: ") + std::strerror(errno));
    }

    if (pid == 0) {
        ::close(pipe_fd[0]);
        ::dup2(pipe_fd[1], STDOUT_FILENO);
        ::close(pipe_fd[1]);
        std::vector<char*> args;
        args.reserve(argv.size() + 1);
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        ::execvp(args[0], args.data());
        std::fprintf(stderr, "exec '%s' failed: %s\n", args[0], std::strerror(errno));
        ::_exit(127);
    }

    ::close(pipe_fd[1]);
    SubprocessResult res;
    char buf[4096];
    for (;;) {
        const ssize_t got = ::read(pipe_fd[0], buf, sizeof(buf));
        if (got > 0) {
            res.out.append(buf, static_cast<std::size_t>(got));
        } else if (got == 0) {
            break;
        } else if (errno != EINTR) {
            ::close(pipe_fd[0]);
            throw IoError(std::string("read from child: ") + std::strerror(errno));
        }
    }
    ::close(pipe_fd[0]);

    int status = 0;
    if (::waitpid(pid, &status, 0) < 0) throw IoError(std::string("waitpid: ") + std::strerror(errno));
    if (WIFEXITED(status))
        res.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        res.exit_code = 128 + WTERMSIG(status);
    return res;
}

}  // namespace tvmerge
