#ifndef PATHSGD_H
#define PATHSGD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PATHSGD_OK 0

#define PATHSGD_ERR_NULL 1

#define PATHSGD_ERR_INVALID 2

#define PATHSGD_ERR_SHAPE 3

#define PATHSGD_ERR_NUMERIC 4

#define PATHSGD_ERR_GRAPH 5

#define PATHSGD_ERR_PANIC 6

#define PATHSGD_OPT_SGD 0

#define PATHSGD_OPT_ADAGRAD 1

#define PATHSGD_OPT_PATHSGD 2

/**
 * Network graph handle.
 */
typedef struct PsgdGraph PsgdGraph;

/**
 * Optimizer state handle.
 */
typedef struct PsgdOptimizer PsgdOptimizer;

/**
 * Edge weight handle.
 */
typedef struct PsgdWeights PsgdWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pathsgd_last_error(void);

/**
 * Builds a fully connected layered graph from `n` layer sizes.
 */
int32_t pathsgd_graph_layered(const size_t *sizes, size_t n, struct PsgdGraph **out);

void pathsgd_graph_free(struct PsgdGraph *g);

/**
 * Number of edges, or 0 for a null handle.
 */
size_t pathsgd_graph_num_edges(const struct PsgdGraph *g);

size_t pathsgd_graph_input_dim(const struct PsgdGraph *g);

size_t pathsgd_graph_output_dim(const struct PsgdGraph *g);

/**
 * Gaussian weights with variance `1 / fan_in` of the target unit.
 */
int32_t pathsgd_weights_init_balanced(const struct PsgdGraph *g,
                                      uint64_t seed,
                                      struct PsgdWeights **out);

/**
 * Copies `len` weights, one per edge in graph order.
 */
int32_t pathsgd_weights_from_array(const struct PsgdGraph *g,
                                   const double *values,
                                   size_t len,
                                   struct PsgdWeights **out);

/**
 * Writes the weights into `dst`, which must hold exactly one value per edge.
 */
int32_t pathsgd_weights_copy_to(const struct PsgdWeights *w, double *dst, size_t len);

void pathsgd_weights_free(struct PsgdWeights *w);

/**
 * l_p path regularizer of the weights.
 */
int32_t pathsgd_path_norm(const struct PsgdGraph *g,
                          const struct PsgdWeights *w,
                          double p,
                          double *out);

/**
 * Per-edge Path-SGD scales, one per edge.
 */
int32_t pathsgd_path_scales(const struct PsgdGraph *g,
                            const struct PsgdWeights *w,
                            double p,
                            double *dst,
                            size_t len);

/**
 * Output scores for one input vector.
 */
int32_t pathsgd_forward(const struct PsgdGraph *g,
                        const struct PsgdWeights *w,
                        const double *x,
                        size_t x_len,
                        double *scores_out,
                        size_t scores_len);

/**
 * Mean truncated cross-entropy over `n` examples (row-major `inputs`) and
 * its gradient, one value per edge.
 */
int32_t pathsgd_backprop(const struct PsgdGraph *g,
                         const struct PsgdWeights *w,
                         const double *inputs,
                         const size_t *labels,
                         size_t n,
                         double *grad_out,
                         size_t grad_len,
                         double *loss_out);

/**
 * Creates an optimizer. `kind` is one of the `PATHSGD_OPT_*` constants;
 * `momentum` is used by SGD and `p` by Path-SGD.
 */
int32_t pathsgd_optimizer_new(const struct PsgdGraph *g,
                              int32_t kind,
                              double step_size,
                              double momentum,
                              double p,
                              struct PsgdOptimizer **out);

/**
 * One update of `w` in place from a gradient with one value per edge.
 */
int32_t pathsgd_optimizer_step(struct PsgdOptimizer *opt,
                               const struct PsgdGraph *g,
                               struct PsgdWeights *w,
                               const double *grad,
                               size_t len);

void pathsgd_optimizer_free(struct PsgdOptimizer *opt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATHSGD_H */
