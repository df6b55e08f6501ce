#include "ndlab/ops.hpp"

#include <cmath>

#include "ndlab/errors.hpp"

namespace ndlab {

Mat affine(const Mat& X, const Mat& W, const Mat& b) {
  if (X.cols != W.rows)
    throw ShapeError("affine: X is " + X.shape_str() + " but W is " + W.shape_str());
  if (b.rows != 1 || b.cols != W.cols)
    throw ShapeError("affine: b is " + b.shape_str() + " but W is " + W.shape_str());
  Mat Y(X.rows, W.cols);
  for (int i = 0; i < X.rows; ++i) {
    const double* xi = X.row_ptr(i);
    double* yi = Y.row_ptr(i);
    for (int j = 0; j < W.cols; ++j) yi[j] = b.data[static_cast<std::size_t>(j)];
    for (int k = 0; k < X.cols; ++k) {
      const double xv = xi[k];
      const double* wk = W.row_ptr(k);
      for (int j = 0; j < W.cols; ++j) yi[j] += xv * wk[j];
    }
  }
  return Y;
}

AffineGrads affine_vjp(const Mat& X, const Mat& W, const Mat& dY) {
  if (dY.rows != X.rows || dY.cols != W.cols)
    throw ShapeError("affine_vjp: dY is " + dY.shape_str() + ", expected " +
                     Mat(X.rows, W.cols).shape_str());
  AffineGrads g{Mat(X.rows, X.cols), Mat(W.rows, W.cols), Mat(1, W.cols)};
  for (int i = 0; i < X.rows; ++i) {
    const double* xi = X.row_ptr(i);
    const double* dyi = dY.row_ptr(i);
    double* dxi = g.dX.row_ptr(i);
    for (int j = 0; j < W.cols; ++j) g.db.data[static_cast<std::size_t>(j)] += dyi[j];
    for (int k = 0; k < X.cols; ++k) {
      const double* wk = W.row_ptr(k);
      double* dwk = g.dW.row_ptr(k);
      double acc = 0.0;
      const double xv = xi[k];
      for (int j = 0; j < W.cols; ++j) {
        acc += dyi[j] * wk[j];
        dwk[j] += xv * dyi[j];
      }
      dxi[k] = acc;
    }
  }
  return g;
}

Mat matmul(const Mat& X, const Mat& W) {
  if (X.cols != W.rows)
    throw ShapeError("matmul: X is " + X.shape_str() + " but W is " + W.shape_str());
  Mat Y(X.rows, W.cols);
  for (int i = 0; i < X.rows; ++i) {
    const double* xi = X.row_ptr(i);
    double* yi = Y.row_ptr(i);
    for (int k = 0; k < X.cols; ++k) {
      const double xv = xi[k];
      const double* wk = W.row_ptr(k);
      for (int j = 0; j < W.cols; ++j) yi[j] += xv * wk[j];
    }
  }
  return Y;
}

MatmulGrads matmul_vjp(const Mat& X, const Mat& W, const Mat& dY) {
  if (dY.rows != X.rows || dY.cols != W.cols)
    throw ShapeError("matmul_vjp: dY is " + dY.shape_str() + ", expected " +
                     Mat(X.rows, W.cols).shape_str());
  MatmulGrads g{Mat(X.rows, X.cols), Mat(W.rows, W.cols)};
  for (int i = 0; i < X.rows; ++i) {
    const double* xi = X.row_ptr(i);
    const double* dyi = dY.row_ptr(i);
    double* dxi = g.dX.row_ptr(i);
    for (int k = 0; k < X.cols; ++k) {
      const double* wk = W.row_ptr(k);
      double* dwk = g.dW.row_ptr(k);
      double acc = 0.0;
      const double xv = xi[k];
      for (int j = 0; j < W.cols; ++j) {
        acc += dyi[j] * wk[j];
        dwk[j] += xv * dyi[j];
      }
      dxi[k] = acc;
    }
  }
  return g;
}

Mat relu(const Mat& X) {
  Mat Y(X.rows, X.cols);
  for (std::size_t i = 0; i < X.data.size(); ++i) Y.data[i] = X.data[i] > 0.0 ? X.data[i] : 0.0;
  return Y;
}

Mat relu_vjp(const Mat& X, const Mat& dY) {
  require_same_shape(X, dY, "relu_vjp");
  Mat dX(X.rows, X.cols);
  for (std::size_t i = 0; i < X.data.size(); ++i) dX.data[i] = X.data[i] > 0.0 ? dY.data[i] : 0.0;
  return dX;
}

namespace {

void check_bn_params(const Mat& X, const Mat& gamma, const Mat& beta, double eps,
                     const Mat& rm, const Mat& rv, const char* who) {
  if (gamma.rows != 1 || gamma.cols != X.cols)
    throw ShapeError(std::string(who) + ": gamma is " + gamma.shape_str() + " for X " + X.shape_str());
  if (beta.rows != 1 || beta.cols != X.cols)
    throw ShapeError(std::string(who) + ": beta is " + beta.shape_str() + " for X " + X.shape_str());
  if (rm.rows != 1 || rm.cols != X.cols || rv.rows != 1 || rv.cols != X.cols)
    throw ShapeError(std::string(who) + ": running stats do not match X " + X.shape_str());
  if (!(eps > 0.0)) throw ParamError(std::string(who) + ": eps must be > 0");
}

}  // namespace

Mat batchnorm_train(const Mat& X, const Mat& gamma, const Mat& beta, double eps,
                    Mat& running_mean, Mat& running_var, BnCache* cache) {
  check_bn_params(X, gamma, beta, eps, running_mean, running_var, "batchnorm_train");
  if (X.rows < 2)
    throw DataError("batchnorm_train: batch of " + std::to_string(X.rows) +
                    " rows is degenerate; need at least 2");
  const int n = X.rows;
  const int d = X.cols;
  Mat mean(1, d), var(1, d);
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += X(i, j);
    mean.data[static_cast<std::size_t>(j)] = s / n;
  }
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    const double mu = mean.data[static_cast<std::size_t>(j)];
    for (int i = 0; i < n; ++i) {
      const double c = X(i, j) - mu;
      s += c * c;
    }
    var.data[static_cast<std::size_t>(j)] = s / n;  // biased
  }
  Mat y(n, d);
  Mat x_hat(n, d), inv_std(1, d);
  for (int j = 0; j < d; ++j)
    inv_std.data[static_cast<std::size_t>(j)] =
        1.0 / std::sqrt(var.data[static_cast<std::size_t>(j)] + eps);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      const double xh = (X(i, j) - mean.data[jj]) * inv_std.data[jj];
      x_hat(i, j) = xh;
      y(i, j) = gamma.data[jj] * xh + beta.data[jj];
    }
  }
  for (int j = 0; j < d; ++j) {
    const std::size_t jj = static_cast<std::size_t>(j);
    running_mean.data[jj] = kBatchNormMomentum * running_mean.data[jj] +
                            (1.0 - kBatchNormMomentum) * mean.data[jj];
    running_var.data[jj] = kBatchNormMomentum * running_var.data[jj] +
                           (1.0 - kBatchNormMomentum) * var.data[jj];
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->train = true;
    cache->n = n;
  }
  return y;
}

Mat batchnorm_eval(const Mat& X, const Mat& gamma, const Mat& beta, double eps,
                   const Mat& running_mean, const Mat& running_var, BnCache* cache) {
  check_bn_params(X, gamma, beta, eps, running_mean, running_var, "batchnorm_eval");
  if (X.rows < 1) throw DataError("batchnorm_eval: empty batch");
  const int n = X.rows;
  const int d = X.cols;
  Mat y(n, d);
  Mat x_hat(n, d), inv_std(1, d);
  for (int j = 0; j < d; ++j)
    inv_std.data[static_cast<std::size_t>(j)] =
        1.0 / std::sqrt(running_var.data[static_cast<std::size_t>(j)] + eps);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      const double xh = (X(i, j) - running_mean.data[jj]) * inv_std.data[jj];
      x_hat(i, j) = xh;
      y(i, j) = gamma.data[jj] * xh + beta.data[jj];
    }
  }
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->train = false;
    cache->n = n;
  }
  return y;
}

BnGrads batchnorm_vjp(const BnCache& cache, const Mat& gamma, const Mat& dY) {
  const int n = cache.x_hat.rows;
  const int d = cache.x_hat.cols;
  if (dY.rows != n || dY.cols != d)
    throw ShapeError("batchnorm_vjp: dY is " + dY.shape_str() + ", cache holds " +
                     cache.x_hat.shape_str());
  BnGrads g{Mat(n, d), Mat(1, d), Mat(1, d)};
  for (int j = 0; j < d; ++j) {
    const std::size_t jj = static_cast<std::size_t>(j);
    double dg = 0.0, db = 0.0;
    for (int i = 0; i < n; ++i) {
      dg += dY(i, j) * cache.x_hat(i, j);
      db += dY(i, j);
    }
    g.dgamma.data[jj] = dg;
    g.dbeta.data[jj] = db;
    const double gis = gamma.data[jj] * cache.inv_std.data[jj];
    if (cache.train) {
      // dX = gamma*inv_std/n * (n*dY - sum(dY) - x_hat * sum(dY*x_hat))
      for (int i = 0; i < n; ++i)
        g.dX(i, j) = gis / n * (n * dY(i, j) - db - cache.x_hat(i, j) * dg);
    } else {
      for (int i = 0; i < n; ++i) g.dX(i, j) = gis * dY(i, j);
    }
  }
  return g;
}

Mat softmax(const Mat& Z, double tau) {
  if (!(tau > 0.0)) throw ParamError("softmax: tau must be > 0");
  Mat P(Z.rows, Z.cols);
  for (int i = 0; i < Z.rows; ++i) {
    const double* zi = Z.row_ptr(i);
    double* pi = P.row_ptr(i);
    double mx = zi[0];
    for (int j = 1; j < Z.cols; ++j) mx = std::max(mx, zi[j]);
    double denom = 0.0;
    for (int j = 0; j < Z.cols; ++j) {
      pi[j] = std::exp((zi[j] - mx) / tau);
      denom += pi[j];
    }
    for (int j = 0; j < Z.cols; ++j) pi[j] /= denom;
  }
  return P;
}

}  // namespace ndlab
