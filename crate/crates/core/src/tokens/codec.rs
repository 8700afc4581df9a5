//! Box and action codecs on top of the quantizer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::grammar::{ParseError, ParseErrorKind};
use super::quant::{bin_center, quantize};
use super::vocab::{Family, Special};
use super::TokenError;
use crate::model::{wrap_angle, Aabb3, ActionStep, WorkspaceBounds};

/// Six `<loc>` bins in `(min.x, min.y, min.z, max.x, max.y, max.z)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxCode {
    pub bins: [u8; 6],
    pub clamped: bool,
}

impl BoxCode {
    pub fn tokens(&self) -> [Special; 6] {
        self.bins.map(Special::Loc)
    }
}

pub fn encode_bbox(b: &Aabb3, bounds: &WorkspaceBounds) -> Result<BoxCode, TokenError> {
    if !b.is_valid() {
        return Err(TokenError::InvalidBox);
    }
    let mut bins = [0u8; 6];
    let mut clamped = false;
    for axis in 0..3 {
        let r = bounds.location[axis];
        let lo = quantize(b.min[axis], r.lo, r.hi)?;
        let hi = quantize(b.max[axis], r.lo, r.hi)?;
        bins[axis] = lo.bin;
        bins[axis + 3] = hi.bin;
        clamped |= lo.clamped || hi.clamped;
    }
    Ok(BoxCode { bins, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub aabb: Aabb3,
    /// Some axis had its min bin above its max bin; the pair was swapped.
    pub swapped: bool,
}

pub fn decode_bbox_bins(bins: &[u8; 6], bounds: &WorkspaceBounds) -> DecodedBox {
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    let mut swapped = false;
    for axis in 0..3 {
        let r = bounds.location[axis];
        let (mut a, mut b) = (bins[axis], bins[axis + 3]);
        if a > b {
            std::mem::swap(&mut a, &mut b);
            swapped = true;
        }
        min[axis] = bin_center(a, r.lo, r.hi);
        max[axis] = bin_center(b, r.lo, r.hi);
    }
    DecodedBox {
        aabb: Aabb3::new(min, max),
        swapped,
    }
}

/// Decodes exactly six `<loc>` tokens.
pub fn decode_bbox(tokens: &[Special], bounds: &WorkspaceBounds) -> Result<DecodedBox, ParseError> {
    let mut bins = [0u8; 6];
    for (i, t) in tokens.iter().enumerate() {
        match t {
            Special::Loc(b) if i < 6 => bins[i] = *b,
            _ if i >= 6 => {
                return Err(ParseError::new(6, ParseErrorKind::LocArity { found: tokens.len() }))
            }
            other => {
                return Err(ParseError::new(
                    i,
                    ParseErrorKind::WrongFamily {
                        expected: Family::Loc,
                        found: other.text(),
                    },
                ))
            }
        }
    }
    if tokens.len() != 6 {
        return Err(ParseError::new(
            tokens.len(),
            ParseErrorKind::LocArity { found: tokens.len() },
        ));
    }
    Ok(decode_bbox_bins(&bins, bounds))
}

/// Seven bins of one action step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepBins {
    pub aloc: [u8; 3],
    pub arot: [u8; 3],
    pub gripper: u8,
}

impl StepBins {
    pub fn tokens(&self) -> [Special; 7] {
        [
            Special::Aloc(self.aloc[0]),
            Special::Aloc(self.aloc[1]),
            Special::Aloc(self.aloc[2]),
            Special::Arot(self.arot[0]),
            Special::Arot(self.arot[1]),
            Special::Arot(self.arot[2]),
            Special::Gripper(self.gripper),
        ]
    }
}

pub fn encode_action(a: &ActionStep, bounds: &WorkspaceBounds) -> Result<(StepBins, bool), TokenError> {
    if a.gripper > 1 {
        return Err(TokenError::InvalidGripper(a.gripper));
    }
    let mut clamped = false;
    let mut aloc = [0u8; 3];
    let mut arot = [0u8; 3];
    for axis in 0..3 {
        let r = bounds.action[axis];
        let q = quantize(a.position[axis], r.lo, r.hi)?;
        aloc[axis] = q.bin;
        clamped |= q.clamped;
        if !a.rotation[axis].is_finite() {
            return Err(TokenError::NonFinite(a.rotation[axis]));
        }
        arot[axis] = quantize(wrap_angle(a.rotation[axis]), -PI, PI)?.bin;
    }
    Ok((
        StepBins {
            aloc,
            arot,
            gripper: a.gripper,
        },
        clamped,
    ))
}

pub fn decode_step(bins: &StepBins, bounds: &WorkspaceBounds) -> ActionStep {
    let mut position = [0.0; 3];
    let mut rotation = [0.0; 3];
    for axis in 0..3 {
        let r = bounds.action[axis];
        position[axis] = bin_center(bins.aloc[axis], r.lo, r.hi);
        rotation[axis] = bin_center(bins.arot[axis], -PI, PI);
    }
    ActionStep {
        position,
        rotation,
        gripper: bins.gripper,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCode {
    pub steps: Vec<StepBins>,
    pub clamped: bool,
}

impl ActionCode {
    /// Step tokens joined by single `<ACT_SEP>` tokens.
    pub fn tokens(&self) -> Vec<Special> {
        steps_to_tokens(&self.steps)
    }
}

pub(crate) fn steps_to_tokens(steps: &[StepBins]) -> Vec<Special> {
    let mut out = Vec::with_capacity(steps.len() * 8);
    for (i, s) in steps.iter().enumerate() {
        if i > 0 {
            out.push(Special::ActSep);
        }
        out.extend(s.tokens());
    }
    out
}

pub fn encode_action_seq(steps: &[ActionStep], bounds: &WorkspaceBounds) -> Result<ActionCode, TokenError> {
    if steps.is_empty() {
        return Err(TokenError::EmptyActionSequence);
    }
    let mut clamped = false;
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        let (bins, c) = encode_action(s, bounds)?;
        clamped |= c;
        out.push(bins);
    }
    Ok(ActionCode {
        steps: out,
        clamped,
    })
}

/// Parses one `step (<ACT_SEP> step)*` chunk covering all of `tokens`.
pub fn decode_action_bins(tokens: &[Special]) -> Result<Vec<StepBins>, ParseError> {
    let wrapped: Vec<super::Token> = tokens.iter().map(|s| super::Token::Special(*s)).collect();
    let mut p = super::grammar::Parser::new(&wrapped);
    if tokens.is_empty() {
        return Err(ParseError::new(0, ParseErrorKind::EmptyActionChunk));
    }
    let steps = p.action_chunk()?;
    if let Some(extra) = tokens.get(p.pos()) {
        return Err(ParseError::new(
            p.pos(),
            ParseErrorKind::Unexpected(extra.text()),
        ));
    }
    Ok(steps)
}

pub fn decode_action_seq(tokens: &[Special], bounds: &WorkspaceBounds) -> Result<Vec<ActionStep>, ParseError> {
    Ok(decode_action_bins(tokens)?
        .iter()
        .map(|b| decode_step(b, bounds))
        .collect())
}
