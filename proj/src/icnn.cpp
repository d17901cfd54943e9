/*
 Copyright 2026 The diffop authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#include <cmath>

#include "diffop/errors.hpp"
#include "diffop/models.hpp"
#include "diffop/numkit.hpp"

namespace diffop::models {

namespace {

// softplus and its first two derivatives, stable for large |x|
double sp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
double sig(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double sp2(double x) {
  const double s = sig(x);
  return s * (1.0 - s);
}

}  // namespace

int IcnnParams::param_count(int in, int hidden, int out) {
  return hidden * in + hidden + out * hidden + out * in + out;
}

IcnnParams IcnnParams::unpack(int in, int hidden, int out, const Vec& theta) {
  if (theta.size() != param_count(in, hidden, out)) {
    throw DimensionMismatch("icnn: parameter vector has size " +
                            std::to_string(theta.size()) + ", expected " +
                            std::to_string(param_count(in, hidden, out)));
  }
  IcnnParams p;
  int off = 0;
  p.W0 = Mat(hidden, in);
  for (int j = 0; j < hidden; ++j)
    for (int q = 0; q < in; ++q) p.W0(j, q) = theta[off++];
  p.b0 = theta.segment(off, hidden);
  off += hidden;
  p.Wz_hat = Mat(out, hidden);
  for (int k = 0; k < out; ++k)
    for (int j = 0; j < hidden; ++j) p.Wz_hat(k, j) = theta[off++];
  p.Wv = Mat(out, in);
  for (int k = 0; k < out; ++k)
    for (int q = 0; q < in; ++q) p.Wv(k, q) = theta[off++];
  p.b1 = theta.segment(off, out);
  return p;
}

Vec IcnnParams::pack() const {
  const int in = static_cast<int>(W0.cols());
  const int hidden = static_cast<int>(W0.rows());
  const int out = static_cast<int>(b1.size());
  Vec theta(param_count(in, hidden, out));
  int off = 0;
  for (int j = 0; j < hidden; ++j)
    for (int q = 0; q < in; ++q) theta[off++] = W0(j, q);
  theta.segment(off, hidden) = b0;
  off += hidden;
  for (int k = 0; k < out; ++k)
    for (int j = 0; j < hidden; ++j) theta[off++] = Wz_hat(k, j);
  for (int k = 0; k < out; ++k)
    for (int q = 0; q < in; ++q) theta[off++] = Wv(k, q);
  theta.segment(off, out) = b1;
  return theta;
}

Vec icnn_forward(const IcnnParams& p, const Vec& v) {
  if (v.size() != p.W0.cols()) {
    throw DimensionMismatch("icnn_forward: input has size " +
                            std::to_string(v.size()) + ", expected " +
                            std::to_string(p.W0.cols()));
  }
  const Vec a = p.W0 * v + p.b0;
  const Vec z = a.unaryExpr([](double x) { return sp(x); });
  // z-path weights are squares of the stored free values, so they are
  // nonnegative and zero free parameters give zero weights
  const Mat Wz = p.Wz_hat.array().square();
  const Vec c = Wz * z + p.Wv * v + p.b1;
  return c.unaryExpr([](double x) { return sp(x); });
}

IcnnEval icnn_eval(const IcnnParams& p, const Vec& v, bool with_param_derivs) {
  const int in = static_cast<int>(p.W0.cols());
  const int hidden = static_cast<int>(p.W0.rows());
  const int out = static_cast<int>(p.b1.size());
  if (v.size() != in) {
    throw DimensionMismatch("icnn_eval: input has size " +
                            std::to_string(v.size()) + ", expected " +
                            std::to_string(in));
  }
  const int d = IcnnParams::param_count(in, hidden, out);
  const int oW0 = 0;
  const int ob0 = hidden * in;
  const int oWz = ob0 + hidden;
  const int oWv = oWz + out * hidden;
  const int ob1 = oWv + out * in;

  const Vec a = p.W0 * v + p.b0;
  Vec z(hidden), sa1(hidden), sa2(hidden);
  for (int j = 0; j < hidden; ++j) {
    z[j] = sp(a[j]);
    sa1[j] = sig(a[j]);
    sa2[j] = sp2(a[j]);
  }
  const Mat Wz = p.Wz_hat.array().square();
  const Mat dWz = 2.0 * p.Wz_hat;  // d(Wz)/d(Wz_hat)

  IcnnEval ev;
  ev.y = Vec(out);
  ev.dv = Mat(out, in);
  ev.dvv.assign(out, Mat::Zero(in, in));
  if (with_param_derivs) {
    ev.dtheta = Mat::Zero(out, d);
    ev.dtheta_dv.assign(out, Mat::Zero(in, d));
  } else {
    ev.dtheta = Mat(out, 0);
  }

  for (int k = 0; k < out; ++k) {
    const double ck = Wz.row(k).dot(z) + p.Wv.row(k).dot(v) + p.b1[k];
    const double s1 = sig(ck);
    const double s2 = sp2(ck);
    ev.y[k] = sp(ck);

    // r = dc_k/dv
    Vec r = p.Wv.row(k).transpose();
    for (int j = 0; j < hidden; ++j) {
      r += Wz(k, j) * sa1[j] * p.W0.row(j).transpose();
    }
    ev.dv.row(k) = s1 * r.transpose();

    // d2c_k/dv2 without the outer softplus
    Mat m2 = Mat::Zero(in, in);
    for (int j = 0; j < hidden; ++j) {
      m2.noalias() +=
          Wz(k, j) * sa2[j] * (p.W0.row(j).transpose() * p.W0.row(j));
    }
    ev.dvv[k] = s2 * (r * r.transpose()) + s1 * m2;

    if (!with_param_derivs) continue;

    // dc_k/dtheta and d(r)/dtheta, combined into the chain rule
    //   d2y/dtheta dv = s2 * (dc/dtheta) r + s1 * dr/dtheta
    Mat& mixed = ev.dtheta_dv[k];
    for (int j = 0; j < hidden; ++j) {
      const double wkj = Wz(k, j);
      for (int q = 0; q < in; ++q) {
        const int col = oW0 + j * in + q;
        const double dc = wkj * sa1[j] * v[q];
        ev.dtheta(k, col) = s1 * dc;
        for (int pp = 0; pp < in; ++pp) {
          double dr = wkj * sa2[j] * v[q] * p.W0(j, pp);
          if (pp == q) dr += wkj * sa1[j];
          mixed(pp, col) = s2 * dc * r[pp] + s1 * dr;
        }
      }
      {
        const int col = ob0 + j;
        const double dc = wkj * sa1[j];
        ev.dtheta(k, col) = s1 * dc;
        for (int pp = 0; pp < in; ++pp) {
          const double dr = wkj * sa2[j] * p.W0(j, pp);
          mixed(pp, col) = s2 * dc * r[pp] + s1 * dr;
        }
      }
      {
        const int col = oWz + k * hidden + j;
        const double dc = z[j] * dWz(k, j);
        ev.dtheta(k, col) = s1 * dc;
        for (int pp = 0; pp < in; ++pp) {
          const double dr = dWz(k, j) * sa1[j] * p.W0(j, pp);
          mixed(pp, col) = s2 * dc * r[pp] + s1 * dr;
        }
      }
    }
    for (int q = 0; q < in; ++q) {
      const int col = oWv + k * in + q;
      const double dc = v[q];
      ev.dtheta(k, col) = s1 * dc;
      for (int pp = 0; pp < in; ++pp) {
        const double dr = pp == q ? 1.0 : 0.0;
        mixed(pp, col) = s2 * dc * r[pp] + s1 * dr;
      }
    }
    {
      const int col = ob1 + k;
      ev.dtheta(k, col) = s1;
      for (int pp = 0; pp < in; ++pp) {
        mixed(pp, col) = s2 * r[pp];
      }
    }
  }
  return ev;
}

IcnnEval icnn_eval_fd(const IcnnParams& p, const Vec& v,
                      bool with_param_derivs) {
  const int in = static_cast<int>(p.W0.cols());
  const int hidden = static_cast<int>(p.W0.rows());
  const int out = static_cast<int>(p.b1.size());
  const int d = IcnnParams::param_count(in, hidden, out);
  const Vec theta = p.pack();

  auto fwd_v = [&](const Vec& vv) { return icnn_forward(p, vv); };
  auto fwd_t = [&](const Vec& th) {
    return icnn_forward(IcnnParams::unpack(in, hidden, out, th), v);
  };

  IcnnEval ev;
  ev.y = icnn_forward(p, v);
  ev.dv = numkit::fd_jacobian(fwd_v, v);
  ev.dvv.resize(out);
  for (int k = 0; k < out; ++k) {
    auto comp = [&](const Vec& vv) { return icnn_forward(p, vv)[k]; };
    ev.dvv[k] = numkit::fd_hessian(comp, v);
  }
  if (!with_param_derivs) {
    ev.dtheta = Mat(out, 0);
    return ev;
  }
  ev.dtheta = numkit::fd_jacobian(fwd_t, theta);
  ev.dtheta_dv.assign(out, Mat::Zero(in, d));
  Vec vp = v;
  Vec tp = theta;
  // mixed blocks by nested central differences in (theta_s, v_p)
  for (int pp = 0; pp < in; ++pp) {
    const double hv = 1e-4 * (1.0 + std::abs(v[pp]));
    for (int s = 0; s < d; ++s) {
      const double ht = 1e-4 * (1.0 + std::abs(theta[s]));
      Vec acc = Vec::Zero(out);
      for (int a = 0; a < 2; ++a) {
        tp[s] = theta[s] + (a == 0 ? ht : -ht);
        const IcnnParams pa = IcnnParams::unpack(in, hidden, out, tp);
        const double sa = a == 0 ? 1.0 : -1.0;
        for (int b = 0; b < 2; ++b) {
          vp[pp] = v[pp] + (b == 0 ? hv : -hv);
          const double sb = b == 0 ? 1.0 : -1.0;
          acc += sa * sb * icnn_forward(pa, vp);
          vp[pp] = v[pp];
        }
      }
      tp[s] = theta[s];
      acc /= 4.0 * hv * ht;
      for (int k = 0; k < out; ++k) ev.dtheta_dv[k](pp, s) = acc[k];
    }
  }
  return ev;
}

}  // namespace diffop::models
