#pragma once

#include <cmath>
#include <stdexcept>

namespace dualdice {

/**
 * Convex penalty f(x) = |x|^p / p with Fenchel conjugate f*(y) = |y|^q / q,
 * q = p / (p - 1). Derivatives use sign(0) = 0, which is the subgradient
 * convention at the kink of f* when q < 2.
 */
template <typename Scalar>
class BasicPenalty {
   public:
    explicit BasicPenalty(Scalar p) : p_(p) {
        if (!(p > Scalar(1))) {
            throw std::invalid_argument("penalty exponent must be greater than 1");
        }
        q_ = p_ / (p_ - Scalar(1));
    }

    Scalar p() const { return p_; }
    Scalar q() const { return q_; }

    Scalar value(Scalar x) const { return power(x, p_) / p_; }
    Scalar derivative(Scalar x) const { return sign(x) * power(x, p_ - Scalar(1)); }
    Scalar conjugate(Scalar y) const { return power(y, q_) / q_; }
    Scalar conjugate_derivative(Scalar y) const { return sign(y) * power(y, q_ - Scalar(1)); }

   private:
    static Scalar sign(Scalar x) { return Scalar((x > Scalar(0)) - (x < Scalar(0))); }
    static Scalar power(Scalar x, Scalar e) {
        using std::abs;
        using std::pow;
        const Scalar ax = abs(x);
        if (e == Scalar(2)) return ax * ax;
        if (e == Scalar(1)) return ax;
        // Small integer and half-integer exponents come up for every p in
        // {1.25, 1.5, 2, 3} and are much cheaper than a general pow.
        const Scalar twice = Scalar(2) * e;
        if (e > Scalar(0) && e <= Scalar(8) && twice == std::floor(twice)) {
            const int whole = static_cast<int>(e);
            Scalar result = Scalar(1);
            for (int k = 0; k < whole; ++k) result *= ax;
            if (twice != Scalar(2 * whole)) {
                using std::sqrt;
                result *= sqrt(ax);
            }
            return result;
        }
        return pow(ax, e);
    }

    Scalar p_;
    Scalar q_;
};

using PenaltyFunction = BasicPenalty<double>;

inline PenaltyFunction penalty(double p) { return PenaltyFunction(p); }

}  // namespace dualdice
