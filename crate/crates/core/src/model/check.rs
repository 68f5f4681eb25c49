use super::{BlockKeys, Model};
use crate::attention::AttentionPath;
use crate::data::VideoClip;
use crate::error::Result;
use crate::tensor::{gradcheck_params_on, ParamCheck, Tape};

impl Model {
    /// Compare tape gradients of the cross-entropy loss on `clip` against
    /// central differences, for every parameter. `new_tape` builds the tape
    /// used for the analytic pass.
    pub fn gradcheck_on(
        &self,
        clip: &VideoClip,
        step: f64,
        new_tape: impl Fn() -> Tape,
    ) -> Result<Vec<ParamCheck>> {
        let keys = BlockKeys::new(&self.cfg)?;
        let inputs: Vec<_> = self
            .named()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        gradcheck_params_on(
            &inputs,
            |tape, vars| {
                let g = self.forward_with_vars(
                    tape,
                    &clip.pixels,
                    &keys,
                    vars.to_vec(),
                    AttentionPath::Gathered,
                )?;
                tape.cross_entropy(g.logits, &[clip.label])
            },
            step,
            new_tape,
        )
    }

    pub fn gradcheck(&self, clip: &VideoClip, step: f64) -> Result<Vec<ParamCheck>> {
        self.gradcheck_on(clip, step, Tape::new)
    }
}
