//! Fixed address-space layout and register-role conventions shared by every
//! assembled test case.

use crate::isa::Register;
use crate::mem::PAGE_SIZE;

/// Number of covert-channel slots (one page each).
pub const CHANNEL_SLOTS: u64 = 256;

/// Displacement from the secret's page to the retirement-pin page, so the
/// pin load can ride on the windowing load's pointer value.
pub const PIN_DISP: u64 = 0x28_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub secret_addr: u64,
    /// Legal twin of the secret for control runs: same value, clean page.
    pub twin_addr: u64,
    /// Store-template target.
    pub scratch_addr: u64,
    /// Slow pointer slot read by windowing gadgets; holds the secret's
    /// address.
    pub w_ptr_addr: u64,
    /// Retirement-pin page (kept in L2, translation flushed).
    pub pin_addr: u64,
    /// First page of the suppressor's pointer chase.
    pub chase_base: u64,
    /// Kernel page at address zero targeted by the suppressing primitive.
    pub null_addr: u64,
    /// Branch-condition page for the misprediction experiment.
    pub cond_addr: u64,
    /// First wrong-path load of the misprediction experiment.
    pub spec_value_addr: u64,
    /// Second primitive's page for the dual-primitive experiment.
    pub addr2: u64,
    pub channel_base: u64,
    pub secret_value: u64,
}

impl Layout {
    pub fn secret_page(&self) -> u64 {
        self.secret_addr & !(PAGE_SIZE - 1)
    }

    pub fn channel_slot_addr(&self, slot: u64) -> u64 {
        self.channel_base + slot * PAGE_SIZE
    }

    pub fn secret_slot(&self) -> u64 {
        self.secret_value >> 12
    }

    pub fn chase_addr(&self, i: usize) -> u64 {
        self.chase_base + i as u64 * PAGE_SIZE
    }
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            secret_addr: 0x0010_0000,
            twin_addr: 0x0018_0000,
            scratch_addr: 0x0020_0000,
            w_ptr_addr: 0x0030_0000,
            pin_addr: 0x0010_0000 + PIN_DISP,
            chase_base: 0x0040_0000,
            null_addr: 0x0000_0000,
            cond_addr: 0x0050_0000,
            spec_value_addr: 0x0058_0000,
            addr2: 0x0060_0000,
            channel_base: 0x0100_0000,
            secret_value: 0x42000,
        }
    }
}

/// Register assignments for assembled sequences. `secret_ptr` is rebound to
/// the windowing destination when the primitive is made dependent on the
/// windowing gadget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegRoles {
    pub w_ptr: Register,
    pub w_dst: Register,
    pub prim_dst: Register,
    pub chan_base: Register,
    pub chain: Register,
    pub secret_ptr: Register,
    pub scratch_ptr: Register,
    pub stored_value: Register,
    pub prim2_dst: Register,
    pub pin_dst: Register,
    pub chase: Register,
    pub sender_dst: Register,
    pub cond_ptr: Register,
    pub cond_dst: Register,
    pub chain2: Register,
    pub twin_ptr: Register,
    pub fp_secret: Register,
    pub fp_a: Register,
    pub fp_b: Register,
}

impl Default for RegRoles {
    fn default() -> Self {
        RegRoles {
            w_ptr: Register::gp(0),
            w_dst: Register::gp(1),
            prim_dst: Register::gp(2),
            chan_base: Register::gp(3),
            chain: Register::gp(4),
            secret_ptr: Register::gp(5),
            scratch_ptr: Register::gp(6),
            stored_value: Register::gp(7),
            prim2_dst: Register::gp(8),
            pin_dst: Register::gp(9),
            chase: Register::gp(10),
            sender_dst: Register::gp(11),
            cond_ptr: Register::gp(12),
            cond_dst: Register::gp(13),
            chain2: Register::gp(14),
            twin_ptr: Register::gp(15),
            fp_secret: Register::fp(0),
            fp_a: Register::fp(2),
            fp_b: Register::fp(3),
        }
    }
}
