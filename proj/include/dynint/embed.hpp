#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dynint/error.hpp"
#include "dynint/matrix.hpp"

namespace dynint {

// Per-field embedding tables V_f (C_f x D), all fields sharing one embedding
// size. Rows are the grouping unit for Group-Lasso-FTRL.
struct EmbeddingTable {
    std::vector<DenseMatrix> tables;  // one per field
    std::size_t embed_dim = 0;

    std::size_t num_fields() const { return tables.size(); }

    static EmbeddingTable init(const std::vector<std::uint32_t>& cardinalities,
                               std::size_t embed_dim, Rng& rng) {
        EmbeddingTable e;
        e.embed_dim = embed_dim;
        const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
        e.tables.reserve(cardinalities.size());
        for (auto card : cardinalities)
            e.tables.push_back(random_matrix(card, embed_dim, rng, scale));
        return e;
    }
};

// Row f of the output is the embedding of field f's active index; equivalent
// to one_hot(idx) x V_f.
inline DenseMatrix lookup(const EmbeddingTable& table, const std::vector<std::uint32_t>& indices) {
    if (indices.size() != table.num_fields())
        throw ShapeError("lookup: " + std::to_string(indices.size()) + " indices for " +
                         std::to_string(table.num_fields()) + " fields");
    DenseMatrix out(table.num_fields(), table.embed_dim);
    for (std::size_t f = 0; f < indices.size(); ++f) {
        const DenseMatrix& vf = table.tables[f];
        if (indices[f] >= vf.rows())
            throw LookupError("lookup: index " + std::to_string(indices[f]) +
                              " out of range for field " + std::to_string(f) + " (cardinality " +
                              std::to_string(vf.rows()) + ")");
        for (std::size_t d = 0; d < table.embed_dim; ++d) out(f, d) = vf(indices[f], d);
    }
    return out;
}

// Adjoint of lookup: adds upstream row f into gradient row indices[f].
// Repeated indices accumulate.
inline void grad_scatter(std::vector<DenseMatrix>& table_grads,
                         const std::vector<std::uint32_t>& indices, const DenseMatrix& upstream) {
    if (indices.size() != table_grads.size() || upstream.rows() != indices.size())
        throw ShapeError("grad_scatter: inconsistent shapes");
    for (std::size_t f = 0; f < indices.size(); ++f) {
        DenseMatrix& g = table_grads[f];
        for (std::size_t d = 0; d < upstream.cols(); ++d) g(indices[f], d) += upstream(f, d);
    }
}

// Per-row L2 norms of one field's table; used by sparsity reports and the
// group-lasso threshold checks.
inline std::vector<double> group_norms(const DenseMatrix& field_table) {
    std::vector<double> out(field_table.rows());
    for (std::size_t r = 0; r < field_table.rows(); ++r) {
        double s = 0.0;
        for (std::size_t d = 0; d < field_table.cols(); ++d)
            s += field_table(r, d) * field_table(r, d);
        out[r] = std::sqrt(s);
    }
    return out;
}

}  // namespace dynint
