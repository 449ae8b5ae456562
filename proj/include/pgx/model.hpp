#pragma once

#include "pgx/nn.hpp"

namespace pgx {

struct ModelDims {
    std::size_t d_in = 1024;  // per-patch feature length
    std::size_t d_g = 746;    // genomic vector length
    std::size_t d = 256;      // shared embedding dimension
    std::size_t heads = 4;    // attention heads; must divide d
    std::size_t hidden = 64;  // risk head hidden width
};

// Which latent vector feeds the risk head. The translated genomic estimate
// is the default; the pathology class token is kept for comparison runs.
enum class RiskInput { kTranslated, kClassToken };

// The full parameter set: pathology encoder (input embedding, class token,
// two attention blocks around a positional layer), genomic projection,
// genomic decoder, and the risk head.
template <typename T>
struct PathoGenXP {
    LinearP<T> input_embed;  // [D_in -> D]
    T class_token;           // [1 x D]
    MSAP<T> msa1;
    LayerNormP<T> ln1;
    PPEGP<T> ppeg;
    MSAP<T> msa2;
    LayerNormP<T> ln2;
    LinearP<T> genomic_projection;  // [D_g -> D]
    MSAP<T> decoder_msa;
    LayerNormP<T> decoder_ln;
    LinearP<T> decoder_out;  // [D -> D]
    MLPP<T> risk_head;       // D -> hidden -> 1
};

template <typename T, typename F>
void visit(PathoGenXP<T>& p, F&& f) {
    visit(p.input_embed, "input_embed", f);
    f("class_token", p.class_token);
    visit(p.msa1, "msa1", f);
    visit(p.ln1, "ln1", f);
    visit(p.ppeg, "ppeg", f);
    visit(p.msa2, "msa2", f);
    visit(p.ln2, "ln2", f);
    visit(p.genomic_projection, "genomic_projection", f);
    visit(p.decoder_msa, "decoder_msa", f);
    visit(p.decoder_ln, "decoder_ln", f);
    visit(p.decoder_out, "decoder_out", f);
    visit(p.risk_head, "risk_head", f);
}
template <typename T, typename F>
void visit(const PathoGenXP<T>& p, F&& f) {
    visit(p.input_embed, "input_embed", f);
    f("class_token", p.class_token);
    visit(p.msa1, "msa1", f);
    visit(p.ln1, "ln1", f);
    visit(p.ppeg, "ppeg", f);
    visit(p.msa2, "msa2", f);
    visit(p.ln2, "ln2", f);
    visit(p.genomic_projection, "genomic_projection", f);
    visit(p.decoder_msa, "decoder_msa", f);
    visit(p.decoder_ln, "decoder_ln", f);
    visit(p.decoder_out, "decoder_out", f);
    visit(p.risk_head, "risk_head", f);
}

// Tape handles for everything the training losses consume.
struct ForwardArtifacts {
    Var p_l_cls;  // class-token row of the encoder output, [1 x D]
    Var g_l;      // projected genomic embedding, [1 x D]
    Var g_l_hat;  // decoder's genomic estimate, [1 x D]
    Var risk;     // [1 x 1]
};

PathoGenXP<Tensor> pathogenx_init(Rng& rng, const ModelDims& dims);
PathoGenXP<Var> bind(Tape& t, const PathoGenXP<Tensor>& p);

// bag[N x D_in] -> [(N+1) x D]; row 0 is the aggregated class token.
Var encode_pathology(Tape& t, const PathoGenXP<Var>& p, Var bag);

// g0[1 x D_g] -> [1 x D]
Var project_genomic(Tape& t, const PathoGenXP<Var>& p, Var g0);

// Encoder output -> genomic estimate [1 x D], read from the class-token
// row of one attention block over the full token stack.
Var decode_to_genomic(Tape& t, const PathoGenXP<Var>& p, Var p_l);

// features[1 x D] -> [1 x 1] unbounded risk score.
Var predict_risk(Tape& t, const PathoGenXP<Var>& p, Var features);

// Paired training pass: all alignment carriers plus the risk.
ForwardArtifacts forward_train(Tape& t, const PathoGenXP<Var>& p, Var bag, Var g0,
                               RiskInput risk_input);

// Image-only inference pass; never touches genomic data.
Var forward_test(Tape& t, const PathoGenXP<Var>& p, Var bag, RiskInput risk_input);

}  // namespace pgx
