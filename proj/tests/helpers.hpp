#pragma once

// Shared test utilities: deterministic random tensors, a central-difference
// gradient checker, an independent convolution reference, scratch directories,
// and subprocess capture for driving the CLI binary.

#include <pyraflow/rng.hpp>
#include <pyraflow/tensor.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace testutil {

inline pyraflow::Tensor random_tensor(int c, int h, int w, pyraflow::Rng& rng,
                                      float lo = -1.0f, float hi = 1.0f) {
  pyraflow::Tensor t(c, h, w);
  for (float& v : t.flat()) v = rng.uniform(lo, hi);
  return t;
}

// Reference convolution: plain quadruple loop over output channel, input
// channel and kernel taps, accumulating in double. Shares only the layout
// conventions with the production kernel, none of the code.
inline pyraflow::Tensor conv2d_ref(const pyraflow::Tensor& input,
                                   const pyraflow::ConvLayer& layer) {
  const int kh = layer.kernel / 2;
  const int ih = input.height(), iw = input.width();
  pyraflow::Tensor out(layer.out_channels, ih, iw);
  for (int o = 0; o < layer.out_channels; ++o) {
    for (int y = 0; y < ih; ++y) {
      for (int x = 0; x < iw; ++x) {
        double acc = layer.bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < layer.in_channels; ++c) {
          for (int ky = 0; ky < layer.kernel; ++ky) {
            for (int kx = 0; kx < layer.kernel; ++kx) {
              const int sy = y + ky - kh;
              const int sx = x + kx - kh;
              if (sy < 0 || sy >= ih || sx < 0 || sx >= iw) continue;
              acc += static_cast<double>(
                         layer.weights[layer.weight_index(o, c, ky, kx)]) *
                     static_cast<double>(input.at(c, sy, sx));
            }
          }
        }
        if (layer.activation == pyraflow::Activation::relu && acc < 0.0)
          acc = 0.0;
        out.at(o, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

// Random projection for turning a tensor-valued op into a scalar loss.
// Coefficients are bounded away from zero so every output entry matters.
inline std::vector<float> random_projection(std::size_t n, pyraflow::Rng& rng) {
  std::vector<float> p(n);
  for (float& v : p) {
    const float mag = rng.uniform(0.5f, 1.5f);
    v = rng.unit() < 0.5f ? -mag : mag;
  }
  return p;
}

inline double project(std::span<const float> values, std::span<const float> p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    acc += static_cast<double>(p[i]) * static_cast<double>(values[i]);
  return acc;
}

struct GradCheckStats {
  int checked = 0;
  int skipped = 0;
  double max_rel = 0.0;
};

// Central differences with step `eps` against the analytic gradient `an` for
// the parameter block `x`. `loss` re-evaluates the scalar objective with the
// current contents of `x`. `skip` masks coordinates where the objective is
// non-smooth within the probe (gates, integer crossings); the relative-error
// denominator is floored so near-zero entries cannot dominate.
inline GradCheckStats fd_check(std::span<float> x, std::span<const float> an,
                               const std::function<double()>& loss,
                               const std::function<bool(std::size_t)>& skip = {},
                               float eps = 1e-3f, double denom_floor = 5e-2) {
  GradCheckStats stats;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (skip && skip(i)) {
      ++stats.skipped;
      continue;
    }
    const float saved = x[i];
    x[i] = saved + eps;
    const double lp = loss();
    x[i] = saved - eps;
    const double lm = loss();
    x[i] = saved;
    const double fd = (lp - lm) / (2.0 * static_cast<double>(eps));
    const double a = static_cast<double>(an[i]);
    const double rel =
        std::abs(fd - a) / std::max(denom_floor, std::abs(fd) + std::abs(a));
    stats.max_rel = std::max(stats.max_rel, rel);
    ++stats.checked;
  }
  return stats;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    pyraflow::Rng rng(pyraflow::mix64(
        static_cast<std::uint64_t>(
            std::chrono::steady_clock::now().time_since_epoch().count()) ^
        std::hash<std::string>{}(tag)));
    std::ostringstream name;
    name << "pyraflow_test_" << tag << "_" << std::hex << rng.next();
    path_ = std::filesystem::temp_directory_path() / name.str();
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf = "") const {
    return leaf.empty() ? path_.string() : (path_ / leaf).string();
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return in ? buf.str() : std::string();
}

inline bool same_file_bytes(const std::string& a, const std::string& b) {
  const std::string ba = read_file_bytes(a);
  return !ba.empty() && ba == read_file_bytes(b);
}

// Shell single-quote escaping for subprocess command lines.
inline std::string shq(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\"'\"'";
    else
      out += c;
  }
  out += "'";
  return out;
}

struct CmdResult {
  int exit_code = -1;
  std::string out;
};

// Runs a shell command, capturing stdout; stderr goes to `err_file` when
// given, otherwise to the test's own stderr.
inline CmdResult run_cmd(const std::string& cmd,
                         const std::string& err_file = "") {
  CmdResult r;
  std::string full = cmd;
  if (!err_file.empty()) full += " 2> " + shq(err_file);
  FILE* pipe = popen(full.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  if (status >= 0 && WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  return r;
}

}  // namespace testutil
