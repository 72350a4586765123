use fresco_core::tiles::{plan_tiles, plan_tiles_px};

use crate::error::CliResult;
use crate::PlanArgs;

pub fn run(a: &PlanArgs) -> CliResult<()> {
    let ((ch, cw), (wh, ww)) = (a.canvas, a.window);
    let plan = if a.latent {
        plan_tiles(ch, cw, wh, ww, a.overlap)?
    } else {
        plan_tiles_px(ch, cw, wh, ww, a.overlap, a.factor)?
    };
    if a.lines {
        print!("{}", plan.render_lines());
    } else {
        print!("{}", plan.render_table());
    }
    Ok(())
}
