//! CFI encodings checked against words built field by field.

mod common;

use cfisim::isa::decode::{decode, CfiEnables};
use cfisim::isa::exception::{
    LANDING_PAD_FAULT_TVAL, SHADOW_STACK_FAULT_TVAL, SOFTWARE_CHECK_CAUSE,
};
use cfisim::isa::{CfiTag, Mnemonic, OpKind};
use cfisim::program::assemble;
use common::*;

fn word(src: &str) -> u32 {
    let b = assemble(src).unwrap();
    if b.len() == 2 {
        u32::from(u16::from_le_bytes([b[0], b[1]]))
    } else {
        u32::from_le_bytes(b[..4].try_into().unwrap())
    }
}

#[test]
fn oracle_words_match_known_values() {
    assert_eq!(lpad(0), 0x0000_0017);
    assert_eq!(sspush(1), 0xce10_4073);
    assert_eq!(sspush(5), 0xce50_4073);
    assert_eq!(sspopchk(1), 0xcdc0_c073);
    assert_eq!(sspopchk(5), 0xcdc2_c073);
    assert_eq!(ssrdp(10), 0xcdc0_4073 | 10 << 7);
    assert_eq!(ssamoswap(false, 0, 0, 0), 0x4800_202f);
    assert_eq!(ssamoswap(true, 0, 0, 0), 0x4800_302f);
    assert_eq!(c_mop(1), 0x6081);
    assert_eq!(c_mop(5), 0x6281);
}

#[test]
fn exception_constants() {
    assert_eq!(SOFTWARE_CHECK_CAUSE, 18);
    assert_eq!(LANDING_PAD_FAULT_TVAL, 2);
    assert_eq!(SHADOW_STACK_FAULT_TVAL, 3);
}

#[test]
fn assembler_emits_oracle_words() {
    for label in [0u32, 1, 0x123, 0xf_ffff] {
        assert_eq!(word(&format!("lpad {label:#x}")), lpad(label));
    }
    assert_eq!(word("sspush ra"), sspush(1));
    assert_eq!(word("sspush t0"), sspush(5));
    assert_eq!(word("sspopchk ra"), sspopchk(1));
    assert_eq!(word("sspopchk t0"), sspopchk(5));
    for rd in 1..32 {
        assert_eq!(word(&format!("ssrdp x{rd}")), ssrdp(rd));
    }
    assert_eq!(
        word("ssamoswap.w a0, a1, (a2)"),
        ssamoswap(false, 10, 12, 11)
    );
    assert_eq!(word("ssamoswap.d t3, t4, (sp)"), ssamoswap(true, 28, 2, 29));
    assert_eq!(word("c.sspush"), c_mop(1));
    assert_eq!(word("c.sspopchk"), c_mop(5));
}

#[test]
fn cfi_words_decode_with_extensions_on() {
    for label in [0u32, 7, 0xf_ffff] {
        let op = decode(lpad(label), CfiEnables::ALL).unwrap();
        assert_eq!(op.mnemonic, Mnemonic::Lpad);
        assert_eq!(op.lpad_label(), label);
        assert_eq!(op.cfi_tag, CfiTag::Lpad);
    }
    for r in [1, 5] {
        let op = decode(sspush(r), CfiEnables::ALL).unwrap();
        assert_eq!(
            (op.mnemonic, op.rs2, op.kind),
            (Mnemonic::SsPush, r as u8, OpKind::Store)
        );
        let op = decode(sspopchk(r), CfiEnables::ALL).unwrap();
        assert_eq!(
            (op.mnemonic, op.rs1, op.kind),
            (Mnemonic::SsPopChk, r as u8, OpKind::Load)
        );
    }
    let op = decode(ssrdp(9), CfiEnables::ALL).unwrap();
    assert_eq!((op.mnemonic, op.rd), (Mnemonic::SsRdp, 9));
    let op = decode(ssamoswap(true, 3, 4, 6), CfiEnables::ALL).unwrap();
    assert_eq!(
        (op.mnemonic, op.rd, op.rs1, op.rs2),
        (Mnemonic::SsAmoSwapD, 3, 4, 6)
    );
    assert_eq!(op.kind, OpKind::Amo);
    let op = decode(c_mop(1), CfiEnables::ALL).unwrap();
    assert_eq!((op.mnemonic, op.size_bytes), (Mnemonic::CSsPush, 2));
    let op = decode(c_mop(5), CfiEnables::ALL).unwrap();
    assert_eq!((op.mnemonic, op.size_bytes), (Mnemonic::CSsPopChk, 2));
}

#[test]
fn disabled_extensions_fall_back() {
    let op = decode(lpad(5), CfiEnables::NONE).unwrap();
    assert_eq!(
        (op.mnemonic, op.rd, op.cfi_tag),
        (Mnemonic::Auipc, 0, CfiTag::None)
    );
    for w in [sspush(1), sspopchk(5), ssrdp(11), c_mop(1), c_mop(5)] {
        let op = decode(w, CfiEnables::NONE).unwrap();
        assert_eq!(op.mnemonic, Mnemonic::Mop, "{w:#x}");
        assert_eq!(op.cfi_tag, CfiTag::None);
    }
    assert_eq!(decode(ssrdp(11), CfiEnables::NONE).unwrap().rd, 11);
    assert!(decode(ssamoswap(false, 1, 2, 3), CfiEnables::NONE).is_err());
    assert!(decode(ssamoswap(true, 1, 2, 3), CfiEnables::NONE).is_err());
    // Each extension gates only its own instructions.
    let ss_only = CfiEnables {
        ss: true,
        lp: false,
    };
    assert_eq!(
        decode(sspush(1), ss_only).unwrap().mnemonic,
        Mnemonic::SsPush
    );
    assert_eq!(decode(lpad(1), ss_only).unwrap().mnemonic, Mnemonic::Auipc);
    let lp_only = CfiEnables {
        ss: false,
        lp: true,
    };
    assert_eq!(decode(lpad(1), lp_only).unwrap().mnemonic, Mnemonic::Lpad);
    assert_eq!(
        decode(sspopchk(1), lp_only).unwrap().mnemonic,
        Mnemonic::Mop
    );
}

#[test]
fn auipc_with_nonzero_rd_is_not_lpad() {
    let op = decode(u_type(3, 10, OPC_AUIPC), CfiEnables::ALL).unwrap();
    assert_eq!(op.mnemonic, Mnemonic::Auipc);
    assert_eq!(op.rd, 10);
}

#[test]
fn every_32bit_word_decodes_consistently_with_its_length() {
    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    for _ in 0..200_000 {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        let raw = rng as u32;
        if let Ok(op) = decode(raw, CfiEnables::ALL) {
            let expect = if raw & 3 == 3 { 4 } else { 2 };
            assert_eq!(op.size_bytes, expect, "{raw:#x}");
            if expect == 2 {
                assert_eq!(op.raw, raw & 0xffff);
            }
        }
    }
}
