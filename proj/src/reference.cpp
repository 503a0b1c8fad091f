#include "dynconv/reference.hpp"

#include <algorithm>

namespace dynconv::ref {

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
    const i64 N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const i64 Cout = kernel.dim(0), Kh = kernel.dim(2), Kw = kernel.dim(3);
    const i64 Hp = H + 2 * spec.pad_h, Wp = W + 2 * spec.pad_w;
    const i64 Ho = (Hp - Kh) / spec.stride_h + 1;
    const i64 Wo = (Wp - Kw) / spec.stride_w + 1;

    Tensor padded({N, Cin, Hp, Wp});
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < Cin; ++c)
            for (i64 h = 0; h < H; ++h)
                for (i64 w = 0; w < W; ++w)
                    padded.at4(n, c, h + spec.pad_h, w + spec.pad_w) = input.at4(n, c, h, w);

    Tensor out({N, Cout, Ho, Wo});
    for (i64 n = 0; n < N; ++n)
        for (i64 co = 0; co < Cout; ++co)
            for (i64 ho = 0; ho < Ho; ++ho)
                for (i64 wo = 0; wo < Wo; ++wo) {
                    double acc = 0.0;
                    for (i64 ci = 0; ci < Cin; ++ci)
                        for (i64 kh = 0; kh < Kh; ++kh)
                            for (i64 kw = 0; kw < Kw; ++kw)
                                acc += padded.at4(n, ci, ho * spec.stride_h + kh, wo * spec.stride_w + kw) *
                                       kernel.at4(co, ci, kh, kw);
                    out.at4(n, co, ho, wo) = acc;
                }
    return out;
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
    const i64 N = input.dim(0), Cin = input.dim(1), L = input.dim(2);
    const i64 Cout = kernel.dim(0), K = kernel.dim(2);
    const i64 Lp = L + 2 * spec.pad_w;
    const i64 Lo = (Lp - K) / spec.stride_w + 1;

    Tensor padded({N, Cin, Lp});
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < Cin; ++c)
            for (i64 l = 0; l < L; ++l) padded.at3(n, c, l + spec.pad_w) = input.at3(n, c, l);

    Tensor out({N, Cout, Lo});
    for (i64 n = 0; n < N; ++n)
        for (i64 co = 0; co < Cout; ++co)
            for (i64 lo = 0; lo < Lo; ++lo) {
                double acc = 0.0;
                for (i64 ci = 0; ci < Cin; ++ci)
                    for (i64 k = 0; k < K; ++k)
                        acc += padded.at3(n, ci, lo * spec.stride_w + k) * kernel.at3(co, ci, k);
                out.at3(n, co, lo) = acc;
            }
    return out;
}

Tensor maxpool2d(const Tensor& input, i64 win_h, i64 win_w, i64 stride_h, i64 stride_w) {
    const i64 N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const i64 Ho = (H - win_h) / stride_h + 1;
    const i64 Wo = (W - win_w) / stride_w + 1;
    Tensor out({N, C, Ho, Wo});
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 ho = 0; ho < Ho; ++ho)
                for (i64 wo = 0; wo < Wo; ++wo) {
                    double best = input.at4(n, c, ho * stride_h, wo * stride_w);
                    for (i64 kh = 0; kh < win_h; ++kh)
                        for (i64 kw = 0; kw < win_w; ++kw)
                            best = std::max(best, input.at4(n, c, ho * stride_h + kh, wo * stride_w + kw));
                    out.at4(n, c, ho, wo) = best;
                }
    return out;
}

Tensor gap(const Tensor& input) {
    const i64 N = input.dim(0), C = input.dim(1);
    i64 spatial = 1;
    for (std::size_t i = 2; i < input.rank(); ++i) spatial *= input.dim(i);
    Tensor out({N, C});
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c) {
            double acc = 0.0;
            for (i64 s = 0; s < spatial; ++s) acc += input[(n * C + c) * spatial + s];
            out.at2(n, c) = acc / static_cast<double>(spatial);
        }
    return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const i64 N = input.dim(0), Din = input.dim(1), Dout = weight.dim(0);
    Tensor out({N, Dout});
    for (i64 n = 0; n < N; ++n)
        for (i64 o = 0; o < Dout; ++o) {
            double acc = bias[o];
            for (i64 i = 0; i < Din; ++i) acc += input.at2(n, i) * weight.at2(o, i);
            out.at2(n, o) = acc;
        }
    return out;
}

}  // namespace dynconv::ref
