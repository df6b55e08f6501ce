#pragma once

#include "ndlab/mat.hpp"

namespace ndlab {

enum class Mode { train, eval };

// Y = X W + b, b broadcast per row (b is 1xH).
Mat affine(const Mat& X, const Mat& W, const Mat& b);

struct AffineGrads {
  Mat dX;
  Mat dW;
  Mat db;  // 1xH
};
AffineGrads affine_vjp(const Mat& X, const Mat& W, const Mat& dY);

// Y = X W. Used where batchnorm immediately re-centers the output, which
// makes a bias a dead parameter (its gradient is identically zero).
Mat matmul(const Mat& X, const Mat& W);

struct MatmulGrads {
  Mat dX;
  Mat dW;
};
MatmulGrads matmul_vjp(const Mat& X, const Mat& W, const Mat& dY);

Mat relu(const Mat& X);
// Upstream gradient passes where x > 0; the subgradient at 0 is 0.
Mat relu_vjp(const Mat& X, const Mat& dY);

inline constexpr double kBatchNormMomentum = 0.9;

struct BnCache {
  Mat x_hat;     // normalized input
  Mat inv_std;   // 1xD, from batch stats (train) or running stats (eval)
  bool train = false;
  int n = 0;
};

// Train mode: normalize by batch mean and biased variance (divide by N),
// then update running stats in place with momentum kBatchNormMomentum.
// Requires N >= 2.
Mat batchnorm_train(const Mat& X, const Mat& gamma, const Mat& beta, double eps,
                    Mat& running_mean, Mat& running_var, BnCache* cache = nullptr);

// Eval mode: normalize by the running stats; any N >= 1.
Mat batchnorm_eval(const Mat& X, const Mat& gamma, const Mat& beta, double eps,
                   const Mat& running_mean, const Mat& running_var, BnCache* cache = nullptr);

struct BnGrads {
  Mat dX;
  Mat dgamma;  // 1xD
  Mat dbeta;   // 1xD
};
BnGrads batchnorm_vjp(const BnCache& cache, const Mat& gamma, const Mat& dY);

// Row-wise softmax(z / tau) with mandatory per-row max subtraction. tau > 0.
Mat softmax(const Mat& Z, double tau);

}  // namespace ndlab
